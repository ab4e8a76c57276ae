/**
 * Training data sources: a seeded synthetic Gaussian set with labels from a
 * random linear teacher (so there is real structure to learn), and the
 * CIFAR10 binary batches when a local copy exists.
 */
import * as fs from "fs";
import * as path from "path";

export interface Dataset {
  inputs: Float32Array;   // n x dim, row-major
  labels: Int32Array;     // n
  n: number;
  dim: number;
  classes: number;
}

/** Small fast counter-based generator; good enough for data synthesis. */
export class Rng {
  private s: number;

  constructor(seed: number) {
    this.s = seed >>> 0;
  }

  next(): number {
    // mulberry32
    this.s = (this.s + 0x6d2b79f5) >>> 0;
    let t = this.s;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  }

  normal(): number {
    let u = 0;
    let v = 0;
    while (u === 0) u = this.next();
    while (v === 0) v = this.next();
    return Math.sqrt(-2.0 * Math.log(u)) * Math.cos(2.0 * Math.PI * v);
  }
}

export function syntheticGaussian(n: number, dim: number, classes: number, seed: number): Dataset {
  // labels come from a wide random ReLU teacher so the task has rich
  // nonlinear structure; a low-capacity teacher would let the student
  // collapse its rows onto a low-rank subspace
  const rng = new Rng(seed);
  const hidden = Math.max(128, Math.min(dim, 256));
  const w1 = new Float64Array(hidden * dim);
  const w2 = new Float64Array(classes * hidden);
  for (let i = 0; i < w1.length; i++) w1[i] = rng.normal() / Math.sqrt(dim);
  for (let i = 0; i < w2.length; i++) w2[i] = rng.normal() / Math.sqrt(hidden);
  const inputs = new Float32Array(n * dim);
  const labels = new Int32Array(n);
  const h = new Float64Array(hidden);
  for (let r = 0; r < n; r++) {
    for (let c = 0; c < dim; c++) inputs[r * dim + c] = rng.normal();
    for (let j = 0; j < hidden; j++) {
      let acc = 0;
      for (let c = 0; c < dim; c++) acc += w1[j * dim + c] * inputs[r * dim + c];
      h[j] = Math.max(acc, 0);
    }
    let best = -Infinity;
    let arg = 0;
    for (let k = 0; k < classes; k++) {
      let acc = 0;
      for (let j = 0; j < hidden; j++) acc += w2[k * hidden + j] * h[j];
      if (acc > best) {
        best = acc;
        arg = k;
      }
    }
    labels[r] = arg;
  }
  return { inputs, labels, n, dim, classes };
}

const CIFAR_RECORD = 3073; // 1 label byte + 3072 pixel bytes

export function cifar10Subset(dir: string, n: number): Dataset {
  const file = path.join(dir, "data_batch_1.bin");
  if (!fs.existsSync(file)) {
    throw new Error(`dataset fetch failure: ${file} not found; ` +
      "download the CIFAR-10 binary batches or use --dataset synthetic-gaussian");
  }
  const blob = fs.readFileSync(file);
  const avail = Math.floor(blob.length / CIFAR_RECORD);
  const take = Math.min(n, avail);
  const inputs = new Float32Array(take * 3072);
  const labels = new Int32Array(take);
  for (let r = 0; r < take; r++) {
    const base = r * CIFAR_RECORD;
    labels[r] = blob[base];
    for (let c = 0; c < 3072; c++) inputs[r * 3072 + c] = blob[base + 1 + c] / 255.0;
  }
  return { inputs, labels, n: take, dim: 3072, classes: 10 };
}
