/**
 * Export job: image folder -> one binary feature file + manifest entry.
 *
 * Images are processed in filename-sorted order; frame ids are assigned
 * sequentially from 0 over the successfully decoded images.  Unreadable
 * files are skipped with a warning and listed in the gap report; a
 * dimension inconsistency is fatal.
 */

import * as fs from 'fs'
import * as path from 'path'
import * as tf from '@tensorflow/tfjs'

import { Backbone, BackboneSpec, DEFAULT_SPEC } from './backbone'
import { ResizePolicy, decodePng, toInputTensor } from './images'
import { FeatureRecord, atomicWrite, encodeSpf, upsertManifest } from './spf'

export interface ExportJob {
  imageDir: string
  outPath: string
  conditionName: string
  conditionId: number
  layer?: string
  resizePolicy?: ResizePolicy
  batchSize?: number
  backbone?: BackboneSpec
  manifestPath?: string
  log?: (message: string) => void
}

export interface ExportResult {
  outPath: string
  dim: number
  count: number
  layer: string
  activationShape: number[]
  skipped: string[]
}

export function listImages(dir: string): string[] {
  return fs
    .readdirSync(dir)
    .filter((f) => f.toLowerCase().endsWith('.png'))
    .sort()
}

export function exportFeatures(job: ExportJob): ExportResult {
  const log = job.log ?? ((m: string) => console.warn(m))
  const policy = job.resizePolicy ?? 'center-crop'
  const batchSize = job.batchSize ?? 8
  const backbone = new Backbone(job.backbone ?? DEFAULT_SPEC)
  const layer = job.layer ?? backbone.defaultLayer

  const files = listImages(job.imageDir)
  if (files.length === 0) {
    throw new Error(`no .png images in ${job.imageDir}`)
  }

  const skipped: string[] = []
  const tensors: tf.Tensor3D[] = []
  for (const f of files) {
    const full = path.join(job.imageDir, f)
    try {
      tensors.push(toInputTensor(decodePng(full), backbone.spec.inputSize, policy))
    } catch (err) {
      skipped.push(f)
      log(`warning: skipping unreadable image ${f}: ${(err as Error).message}`)
    }
  }
  if (tensors.length === 0) {
    throw new Error(`no decodable images in ${job.imageDir}`)
  }

  const records: FeatureRecord[] = []
  let dim = -1
  let activationShape: number[] = []
  for (let start = 0; start < tensors.length; start += batchSize) {
    const slice = tensors.slice(start, start + batchSize)
    const batch = tf.stack(slice) as tf.Tensor4D
    const activations = backbone.forward(batch, layer)
    batch.dispose()
    for (const act of activations) {
      if (dim < 0) {
        dim = act.flat.length
        activationShape = act.shape
      } else if (act.flat.length !== dim) {
        throw new Error(
          `dimension inconsistency: frame ${records.length} produced ` +
            `${act.flat.length}, expected ${dim}`,
        )
      }
      records.push({ frameId: records.length, features: act.flat })
    }
  }
  tensors.forEach((t) => t.dispose())

  atomicWrite(job.outPath, encodeSpf(dim, job.conditionId, records))

  if (job.manifestPath) {
    upsertManifest(job.manifestPath, dim, {
      id: job.conditionId,
      name: job.conditionName,
      file: path.relative(path.dirname(path.resolve(job.manifestPath)),
                          path.resolve(job.outPath)),
      layer,
      flatten_order: 'channel-major (channel, row, column)',
      activation_shape: activationShape,
      input_size: backbone.spec.inputSize,
    })
  }
  if (skipped.length > 0) {
    log(`gap report: ${skipped.length} image(s) skipped: ${skipped.join(', ')}`)
  }
  return { outPath: job.outPath, dim, count: records.length, layer,
           activationShape, skipped }
}
