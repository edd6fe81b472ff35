/**
 * Reader/writer for the policy weights container consumed by the Python
 * runtime (see ../../docs/weights_format.md).  Tensors are float32,
 * row-major, packed in sorted name order; the manifest carries a CRC32 of
 * the data section.
 */
import * as fs from "fs";

export const MAGIC = Buffer.from("HLPW");
export const FORMAT_VERSION = 1;

export interface ArchMeta {
  obs_dim: number;
  history_len: number;
  latent_dim: number;
  activation: string;
  encoder_hidden: number[];
  decoder_hidden: number[];
  actor_hidden: number[];
}

export const DEFAULT_META: ArchMeta = {
  obs_dim: 17,
  history_len: 5,
  latent_dim: 16,
  activation: "elu",
  encoder_hidden: [128, 64],
  decoder_hidden: [64],
  actor_hidden: [256, 128, 64],
};

export interface NamedTensors {
  [name: string]: { shape: number[]; data: Float32Array };
}

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(buf: Buffer): number {
  let c = 0xffffffff;
  for (let i = 0; i < buf.length; i++) c = CRC_TABLE[(c ^ buf[i]) & 0xff] ^ (c >>> 8);
  return (c ^ 0xffffffff) >>> 0;
}

/** Stable JSON stringify with sorted keys, matching the Python writer. */
function stableStringify(value: unknown): string {
  if (Array.isArray(value)) return `[${value.map(stableStringify).join(",")}]`;
  if (value !== null && typeof value === "object") {
    const entries = Object.keys(value as object)
      .sort()
      .map((k) => `${JSON.stringify(k)}:${stableStringify((value as Record<string, unknown>)[k])}`);
    return `{${entries.join(",")}}`;
  }
  return JSON.stringify(value);
}

export function saveWeights(path: string, tensors: NamedTensors, meta: ArchMeta): void {
  const names = Object.keys(tensors).sort();
  const blobs: Buffer[] = [];
  const entries: { name: string; shape: number[]; offset: number }[] = [];
  let offset = 0;
  for (const name of names) {
    const t = tensors[name];
    const expected = t.shape.reduce((a, b) => a * b, 1);
    if (t.data.length !== expected) {
      throw new Error(`tensor ${name}: shape ${t.shape} does not match ${t.data.length} values`);
    }
    const raw = Buffer.from(t.data.buffer.slice(t.data.byteOffset, t.data.byteOffset + t.data.byteLength));
    entries.push({ name, shape: t.shape, offset });
    blobs.push(raw);
    offset += raw.length;
  }
  const data = Buffer.concat(blobs);
  const manifest = {
    format_version: FORMAT_VERSION,
    dtype: "float32",
    byte_order: "little",
    data_size: data.length,
    checksum_crc32: crc32(data),
    meta,
    tensors: entries,
  };
  const payload = Buffer.from(stableStringify(manifest), "utf-8");
  const header = Buffer.alloc(4);
  header.writeUInt32LE(payload.length, 0);
  fs.writeFileSync(path, Buffer.concat([MAGIC, header, payload, data]));
}

export function loadWeights(path: string): { tensors: NamedTensors; meta: ArchMeta } {
  const blob = fs.readFileSync(path);
  if (!blob.subarray(0, 4).equals(MAGIC)) throw new Error("not a policy weights file");
  const length = blob.readUInt32LE(4);
  const manifest = JSON.parse(blob.subarray(8, 8 + length).toString("utf-8"));
  if (manifest.format_version !== FORMAT_VERSION) {
    throw new Error(`unsupported format version ${manifest.format_version}`);
  }
  const data = blob.subarray(8 + length);
  if (data.length !== manifest.data_size) throw new Error("weights file truncated");
  if (crc32(Buffer.from(data)) !== manifest.checksum_crc32) throw new Error("checksum mismatch");
  const tensors: NamedTensors = {};
  for (const entry of manifest.tensors) {
    const count = entry.shape.reduce((a: number, b: number) => a * b, 1);
    // copy out of the (possibly pooled) buffer before aliasing as floats
    const slice = data.subarray(entry.offset, entry.offset + count * 4);
    const copy = new Uint8Array(count * 4);
    copy.set(slice);
    tensors[entry.name] = { shape: entry.shape, data: new Float32Array(copy.buffer, 0, count) };
  }
  return { tensors, meta: manifest.meta };
}
