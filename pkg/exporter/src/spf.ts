/**
 * Binary feature-file format ("SPF1") writer/reader plus the sidecar
 * manifest, matching the place-recognition engine's store layout:
 *
 *   magic "SPF1" | u32 dim | u32 count | u32 conditionId
 *   then count records of (u32 frameId, dim x f32), all little-endian.
 */

import * as fs from 'fs'
import * as path from 'path'

export const SPF_MAGIC = 'SPF1'

export interface FeatureRecord {
  frameId: number
  features: Float32Array
}

export function encodeSpf(
  dim: number,
  conditionId: number,
  records: FeatureRecord[],
): Buffer {
  const headerSize = 4 + 4 + 4 + 4
  const recordSize = 4 + 4 * dim
  const buf = Buffer.alloc(headerSize + recordSize * records.length)
  buf.write(SPF_MAGIC, 0, 'ascii')
  buf.writeUInt32LE(dim, 4)
  buf.writeUInt32LE(records.length, 8)
  buf.writeUInt32LE(conditionId, 12)
  let off = headerSize
  for (const rec of records) {
    if (rec.features.length !== dim) {
      throw new Error(
        `record ${rec.frameId}: dimension ${rec.features.length} != header ${dim}`,
      )
    }
    buf.writeUInt32LE(rec.frameId, off)
    off += 4
    for (let i = 0; i < dim; i++) {
      buf.writeFloatLE(rec.features[i], off)
      off += 4
    }
  }
  return buf
}

export function decodeSpf(buf: Buffer): {
  dim: number
  conditionId: number
  records: FeatureRecord[]
} {
  if (buf.length < 16 || buf.toString('ascii', 0, 4) !== SPF_MAGIC) {
    throw new Error('not a feature file (bad magic)')
  }
  const dim = buf.readUInt32LE(4)
  const count = buf.readUInt32LE(8)
  const conditionId = buf.readUInt32LE(12)
  const recordSize = 4 + 4 * dim
  if (buf.length !== 16 + recordSize * count) {
    throw new Error(`truncated: expected ${count} records of ${recordSize} bytes`)
  }
  const records: FeatureRecord[] = []
  let off = 16
  for (let r = 0; r < count; r++) {
    const frameId = buf.readUInt32LE(off)
    off += 4
    const features = new Float32Array(dim)
    for (let i = 0; i < dim; i++) {
      features[i] = buf.readFloatLE(off)
      off += 4
    }
    records.push({ frameId, features })
  }
  return { dim, conditionId, records }
}

/** Write via temp file + rename so partial writes never surface. */
export function atomicWrite(filePath: string, data: Buffer | string): void {
  const dir = path.dirname(path.resolve(filePath))
  fs.mkdirSync(dir, { recursive: true })
  const tmp = path.join(dir, `.tmp-${process.pid}-${path.basename(filePath)}`)
  fs.writeFileSync(tmp, data)
  fs.renameSync(tmp, filePath)
}

export interface ManifestCondition {
  id: number
  name: string
  file: string
  layer?: string
  flatten_order?: string
  activation_shape?: number[]
  input_size?: number
}

export interface Manifest {
  format: string
  dim: number
  tolerance: number
  conditions: ManifestCondition[]
  ground_truth?: string
}

/**
 * Add or replace one condition entry; the dimension must agree with any
 * existing manifest.
 */
export function upsertManifest(
  manifestPath: string,
  dim: number,
  entry: ManifestCondition,
  tolerance = 0,
): Manifest {
  let doc: Manifest
  if (fs.existsSync(manifestPath)) {
    doc = JSON.parse(fs.readFileSync(manifestPath, 'utf-8')) as Manifest
    if (doc.dim !== dim) {
      throw new Error(
        `manifest ${manifestPath} holds dimension ${doc.dim}, new features have ${dim}`,
      )
    }
  } else {
    doc = { format: 'spf-manifest/1', dim, tolerance, conditions: [] }
  }
  doc.conditions = doc.conditions.filter((c) => c.id !== entry.id)
  doc.conditions.push(entry)
  doc.conditions.sort((a, b) => a.id - b.id)
  atomicWrite(manifestPath, JSON.stringify(doc, null, 2) + '\n')
  return doc
}
