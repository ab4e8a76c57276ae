/**
 * The .nnx weight-file format, shared with the extraction toolkit.
 *
 * Layout: one UTF-8 JSON header line (sorted keys, "format": "nnx-1",
 * "dims": [d0..dout]) terminated by \n, then per layer the weight matrix
 * (rows x cols, row-major, little-endian float64) followed by the bias
 * vector.
 */
import * as fs from "fs";

export interface DenseNet {
  dims: number[];
  /** weights[i]: Float64Array of shape dims[i+1] x dims[i], row-major */
  weights: Float64Array[];
  biases: Float64Array[];
  meta: Record<string, unknown>;
}

function canonicalJson(obj: Record<string, unknown>): string {
  const keys = Object.keys(obj).sort();
  const parts = keys.map((k) => `${JSON.stringify(k)}:${JSON.stringify(obj[k])}`);
  return `{${parts.join(",")}}`;
}

export function saveNet(net: DenseNet, path: string): void {
  const header: Record<string, unknown> = { format: "nnx-1", dims: net.dims, ...net.meta };
  const chunks: Buffer[] = [Buffer.from(canonicalJson(header) + "\n", "utf-8")];
  for (let i = 0; i < net.weights.length; i++) {
    chunks.push(Buffer.from(net.weights[i].buffer, net.weights[i].byteOffset, net.weights[i].byteLength));
    chunks.push(Buffer.from(net.biases[i].buffer, net.biases[i].byteOffset, net.biases[i].byteLength));
  }
  fs.writeFileSync(path, Buffer.concat(chunks));
}

export function loadNet(path: string): DenseNet {
  const blob = fs.readFileSync(path);
  const nl = blob.indexOf(0x0a);
  if (nl < 0) throw new Error(`${path}: missing header line`);
  const header = JSON.parse(blob.subarray(0, nl).toString("utf-8"));
  if (header.format !== "nnx-1") throw new Error(`${path}: unsupported format ${header.format}`);
  const dims: number[] = header.dims;
  const weights: Float64Array[] = [];
  const biases: Float64Array[] = [];
  let off = nl + 1;
  for (let i = 1; i < dims.length; i++) {
    const nW = dims[i] * dims[i - 1];
    weights.push(new Float64Array(blob.buffer.slice(blob.byteOffset + off, blob.byteOffset + off + nW * 8)));
    off += nW * 8;
    biases.push(new Float64Array(blob.buffer.slice(blob.byteOffset + off, blob.byteOffset + off + dims[i] * 8)));
    off += dims[i] * 8;
  }
  if (off !== blob.length) throw new Error(`${path}: ${blob.length - off} trailing bytes`);
  const meta = { ...header };
  delete meta.format;
  delete meta.dims;
  return { dims, weights, biases, meta };
}

/** Exact float64 forward pass over the exported parameters. */
export function forward(net: DenseNet, x: ArrayLike<number>): Float64Array {
  let y = Float64Array.from(x as number[]);
  const last = net.weights.length - 1;
  for (let l = 0; l < net.weights.length; l++) {
    const rows = net.dims[l + 1];
    const cols = net.dims[l];
    const w = net.weights[l];
    const b = net.biases[l];
    const out = new Float64Array(rows);
    for (let r = 0; r < rows; r++) {
      let acc = 0.0;
      const base = r * cols;
      for (let c = 0; c < cols; c++) acc += w[base + c] * y[c];
      acc += b[r];
      out[r] = l === last ? acc : Math.max(acc, 0);
    }
    y = out;
  }
  return y;
}

export function paramCount(net: DenseNet): number {
  let n = 0;
  for (let i = 1; i < net.dims.length; i++) n += net.dims[i] * (net.dims[i - 1] + 1);
  return n;
}
