/**
 * Dense ReLU classifier: build, train, and export at float64.
 *
 * Optimizer is SGD with momentum 0.9, the loss is categorical cross entropy
 * on integer labels computed from the raw logits, batch size 64. The
 * exported output layer is linear; no softmax reaches the weight file.
 */
import * as tf from "@tensorflow/tfjs";

import { Dataset, Rng } from "./data";
import { DenseNet, forward } from "./nnx";

export interface TrainSpec {
  dims: number[];          // [d0, hidden..., classes]
  epochs: number;
  batchSize: number;
  learningRate: number;
  momentum: number;
  seed: number;
}

export interface TrainResult {
  net: DenseNet;
  testAccuracy: number;
  finalLoss: number;
  alwaysOff: { layer: number; index: number }[];
  diverged: boolean;
}

export function buildModel(dims: number[], seed: number): tf.Sequential {
  const model = tf.sequential();
  for (let i = 1; i < dims.length; i++) {
    model.add(tf.layers.dense({
      inputShape: i === 1 ? [dims[0]] : undefined,
      units: dims[i],
      activation: i === dims.length - 1 ? undefined : "relu",
      kernelInitializer: tf.initializers.glorotUniform({ seed: seed + i }),
      biasInitializer: "zeros",
    }));
  }
  return model;
}

function batchLoss(model: tf.Sequential, xs: tf.Tensor2D, labels: tf.Tensor1D, classes: number): tf.Scalar {
  const logits = model.apply(xs) as tf.Tensor2D;
  const oneHot = tf.oneHot(labels, classes);
  return tf.losses.softmaxCrossEntropy(oneHot, logits) as tf.Scalar;
}

export async function exportNet(model: tf.Sequential, dims: number[], meta: Record<string, unknown>): Promise<DenseNet> {
  const weights: Float64Array[] = [];
  const biases: Float64Array[] = [];
  for (let i = 0; i < model.layers.length; i++) {
    const [kernel, bias] = model.layers[i].getWeights();
    const k = (await kernel.data()) as Float32Array;   // shape [in, out], column per unit
    const b = (await bias.data()) as Float32Array;
    const rows = dims[i + 1];
    const cols = dims[i];
    const w64 = new Float64Array(rows * cols);
    for (let r = 0; r < rows; r++) {
      for (let c = 0; c < cols; c++) w64[r * cols + c] = k[c * rows + r];
    }
    weights.push(w64);
    biases.push(Float64Array.from(b));
  }
  return { dims: [...dims], weights, biases, meta };
}

export function findAlwaysOff(net: DenseNet, probes: number, seed: number): { layer: number; index: number }[] {
  const rng = new Rng(seed);
  const hidden = net.dims.length - 2;
  const everActive: boolean[][] = [];
  for (let l = 0; l < hidden; l++) everActive.push(new Array(net.dims[l + 1]).fill(false));
  for (let p = 0; p < probes; p++) {
    let y = new Float64Array(net.dims[0]);
    for (let c = 0; c < y.length; c++) y[c] = rng.normal();
    for (let l = 0; l < hidden; l++) {
      const rows = net.dims[l + 1];
      const cols = net.dims[l];
      const out = new Float64Array(rows);
      for (let r = 0; r < rows; r++) {
        let acc = net.biases[l][r];
        const base = r * cols;
        for (let c = 0; c < cols; c++) acc += net.weights[l][base + c] * y[c];
        if (acc > 0) {
          everActive[l][r] = true;
          out[r] = acc;
        }
      }
      y = out;
    }
  }
  const off: { layer: number; index: number }[] = [];
  for (let l = 0; l < hidden; l++) {
    for (let r = 0; r < net.dims[l + 1]; r++) {
      if (!everActive[l][r]) off.push({ layer: l + 1, index: r });
    }
  }
  return off;
}

export async function trainAndExport(spec: TrainSpec, data: Dataset): Promise<TrainResult> {
  if (data.dim !== spec.dims[0] || data.classes !== spec.dims[spec.dims.length - 1]) {
    throw new Error(`architecture ${spec.dims} does not fit data (${data.dim} -> ${data.classes})`);
  }
  const holdout = Math.max(64, Math.floor(data.n * 0.1));
  const nTrain = data.n - holdout;
  const model = buildModel(spec.dims, spec.seed);
  const optimizer = tf.train.momentum(spec.learningRate, spec.momentum);
  const order = new Int32Array(nTrain);
  for (let i = 0; i < nTrain; i++) order[i] = i;
  const rng = new Rng(spec.seed ^ 0x5eed);

  let lastLoss = Number.NaN;
  for (let epoch = 0; epoch < spec.epochs; epoch++) {
    for (let i = nTrain - 1; i > 0; i--) {          // seeded shuffle
      const j = Math.floor(rng.next() * (i + 1));
      const t = order[i];
      order[i] = order[j];
      order[j] = t;
    }
    for (let start = 0; start + spec.batchSize <= nTrain; start += spec.batchSize) {
      const bx = new Float32Array(spec.batchSize * data.dim);
      const by = new Int32Array(spec.batchSize);
      for (let k = 0; k < spec.batchSize; k++) {
        const src = order[start + k];
        bx.set(data.inputs.subarray(src * data.dim, (src + 1) * data.dim), k * data.dim);
        by[k] = data.labels[src];
      }
      const loss = tf.tidy(() => {
        const xs = tf.tensor2d(bx, [spec.batchSize, data.dim]);
        const ys = tf.tensor1d(by, "int32");
        return optimizer.minimize(() => batchLoss(model, xs, ys, data.classes), true) as tf.Scalar;
      });
      lastLoss = loss.dataSync()[0];
      loss.dispose();
    }
  }
  const diverged = !Number.isFinite(lastLoss);

  // held-out accuracy straight from the training framework
  const testX = tf.tensor2d(data.inputs.subarray(nTrain * data.dim), [holdout, data.dim]);
  const logits = model.apply(testX) as tf.Tensor2D;
  const pred = (await logits.argMax(1).data()) as Int32Array;
  let hits = 0;
  for (let i = 0; i < holdout; i++) {
    if (pred[i] === data.labels[nTrain + i]) hits++;
  }
  testX.dispose();
  logits.dispose();

  const net = await exportNet(model, spec.dims, {
    provenance: "trainer", seed: spec.seed, epochs: spec.epochs,
  });
  const alwaysOff = findAlwaysOff(net, 10_000, spec.seed + 99);
  return { net, testAccuracy: hits / holdout, finalLoss: lastLoss, alwaysOff, diverged };
}

/** Max |float64 forward - tfjs forward| over sample inputs, for reporting. */
export async function frameworkGap(model: tf.Sequential, net: DenseNet, inputs: Float32Array, n: number): Promise<number> {
  const dim = net.dims[0];
  const xs = tf.tensor2d(inputs.subarray(0, n * dim), [n, dim]);
  const out = (await (model.apply(xs) as tf.Tensor2D).data()) as Float32Array;
  xs.dispose();
  let worst = 0;
  const classes = net.dims[net.dims.length - 1];
  for (let r = 0; r < n; r++) {
    const mine = forward(net, inputs.subarray(r * dim, (r + 1) * dim));
    for (let k = 0; k < classes; k++) {
      worst = Math.max(worst, Math.abs(mine[k] - out[r * classes + k]));
    }
  }
  return worst;
}
