/**
 * relupeel-trainer command line.
 *
 *   train --arch 3072,64,64,64,64,10 --epochs 10 --out victim.nnx
 *         [--dataset synthetic-gaussian|cifar10-subset] [--seed N]
 *         [--samples N] [--lr F] [--cifar-dir DIR]
 *
 * Writes the victim network, a metrics JSON next to it, and a probe file
 * (<out>.probe.json) holding 100 held-out inputs with the trainer's own
 * float64 forward-pass outputs, numbers encoded as 17-digit strings.
 */
import * as fs from "fs";

import { cifar10Subset, Dataset, Rng, syntheticGaussian } from "./data";
import { buildModel, frameworkGap, trainAndExport, TrainSpec } from "./model";
import { forward, paramCount, saveNet } from "./nnx";

interface Args {
  [key: string]: string;
}

function parseArgs(argv: string[]): { command: string; args: Args } {
  const command = argv[0];
  const args: Args = {};
  for (let i = 1; i < argv.length; i += 2) {
    if (!argv[i].startsWith("--")) throw new Error(`expected a --flag, got ${argv[i]}`);
    args[argv[i].slice(2)] = argv[i + 1];
  }
  return { command, args };
}

function fmt17(v: number): string {
  return v.toPrecision(17);
}

async function train(args: Args): Promise<number> {
  const dims = (args.arch ?? "").split(",").map((s) => parseInt(s, 10));
  if (dims.length < 3 || dims.some((d) => !Number.isFinite(d) || d < 1)) {
    console.error("train needs --arch d0,d1,...,classes with at least one hidden layer");
    return 2;
  }
  const out = args.out;
  if (!out) {
    console.error("train needs --out victim.nnx");
    return 2;
  }
  const seed = parseInt(args.seed ?? "0", 10);
  const spec: TrainSpec = {
    dims,
    epochs: parseInt(args.epochs ?? "10", 10),
    batchSize: 64,
    learningRate: parseFloat(args.lr ?? "0.02"),
    momentum: 0.9,
    seed,
  };
  const nSamples = parseInt(args.samples ?? "4096", 10);
  const datasetName = args.dataset ?? "synthetic-gaussian";
  let data: Dataset;
  if (datasetName === "cifar10-subset") {
    data = cifar10Subset(args["cifar-dir"] ?? "data/cifar-10-batches-bin", nSamples);
  } else if (datasetName === "synthetic-gaussian") {
    data = syntheticGaussian(nSamples, dims[0], dims[dims.length - 1], seed + 1);
  } else {
    console.error(`unknown dataset ${datasetName}`);
    return 2;
  }

  const t0 = Date.now();
  const result = await trainAndExport(spec, data);
  if (result.diverged) console.error("warning: training diverged (non-finite loss)");
  saveNet(result.net, out);

  // probe: fresh inputs plus this framework's float64 forward outputs
  const rng = new Rng(seed + 7);
  const probeN = 100;
  const inputs: string[][] = [];
  const outputs: string[][] = [];
  for (let i = 0; i < probeN; i++) {
    const x = new Float64Array(dims[0]);
    for (let c = 0; c < x.length; c++) x[c] = rng.normal();
    inputs.push(Array.from(x, fmt17));
    outputs.push(Array.from(forward(result.net, x), fmt17));
  }
  fs.writeFileSync(out + ".probe.json", JSON.stringify({ inputs, outputs }));

  // float32-vs-float64 agreement of the exported parameters
  const model = buildModel(dims, seed);
  // rebuilt model has fresh weights; measure against the trained export by
  // loading the exported weights back into a tfjs model
  const tf = await import("@tensorflow/tfjs");
  for (let l = 0; l < model.layers.length; l++) {
    const rows = dims[l + 1];
    const cols = dims[l];
    const k = new Float32Array(cols * rows);
    for (let r = 0; r < rows; r++) {
      for (let c = 0; c < cols; c++) k[c * rows + r] = result.net.weights[l][r * cols + c];
    }
    model.layers[l].setWeights([
      tf.tensor2d(k, [cols, rows]),
      tf.tensor1d(Float32Array.from(result.net.biases[l])),
    ]);
  }
  const gap = await frameworkGap(model, result.net, data.inputs, Math.min(100, data.n));

  const metrics = {
    arch: dims,
    dataset: datasetName,
    epochs: spec.epochs,
    seed,
    params: paramCount(result.net),
    test_accuracy: result.testAccuracy,
    final_loss: result.finalLoss,
    diverged: result.diverged,
    always_off: result.alwaysOff,
    float32_float64_gap: gap,
    train_seconds: (Date.now() - t0) / 1000,
    probe: out + ".probe.json",
  };
  fs.writeFileSync(out + ".metrics.json", JSON.stringify(metrics, null, 2) + "\n");
  console.log(`wrote ${out} (${metrics.params} parameters), ` +
    `test accuracy ${result.testAccuracy.toFixed(4)}, ` +
    `${result.alwaysOff.length} always-off neurons flagged`);
  return 0;
}

async function main(): Promise<number> {
  const { command, args } = parseArgs(process.argv.slice(2));
  if (command === "train") return train(args);
  console.error("usage: cli.js train --arch d0,d1,...,classes --epochs N --out victim.nnx");
  return 2;
}

main().then((code) => {
  process.exitCode = code;
});
