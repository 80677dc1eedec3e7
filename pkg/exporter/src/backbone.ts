/**
 * Frozen convolutional backbone.
 *
 * Pretrained weights cannot be fetched in an offline build, so the
 * default backbone is a fixed CNN whose weights come from a seeded PRNG:
 * random but identical on every machine and every run, which is all the
 * exporter needs for reproducible descriptors.  Frozen random projections
 * preserve image similarity structure well enough for format-level and
 * pipeline work; swap in a real model by replacing this module's weights.
 */

import * as tf from '@tensorflow/tfjs'

export interface BackboneSpec {
  inputSize: number
  seed: number
  /** channels per stage; each stage is conv 3x3 stride 2 + relu */
  stages: number[]
}

export const DEFAULT_SPEC: BackboneSpec = {
  inputSize: 64,
  seed: 1234,
  stages: [16, 32, 64, 128],
}

/** Deterministic 32-bit PRNG (mulberry32), uniform in [0, 1). */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) >>> 0
    let t = a
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

function uniformWeights(rand: () => number, shape: number[], scale: number): tf.Tensor {
  const n = shape.reduce((a, b) => a * b, 1)
  const data = new Float32Array(n)
  for (let i = 0; i < n; i++) {
    data[i] = Math.fround((rand() * 2 - 1) * scale)
  }
  return tf.tensor(data, shape)
}

export interface LayerActivation {
  name: string
  /** activation shape as [channels, height, width] */
  shape: number[]
  flat: Float32Array
}

export class Backbone {
  readonly spec: BackboneSpec
  readonly layerNames: string[]
  private kernels: tf.Tensor4D[] = []
  private biases: tf.Tensor1D[] = []

  constructor(spec: BackboneSpec = DEFAULT_SPEC) {
    if (spec.stages.length === 0) throw new Error('backbone needs at least one stage')
    this.spec = spec
    const rand = mulberry32(spec.seed)
    let inChannels = 3
    for (const outChannels of spec.stages) {
      const fanIn = 3 * 3 * inChannels
      const scale = Math.sqrt(6 / (fanIn + outChannels))
      this.kernels.push(
        uniformWeights(rand, [3, 3, inChannels, outChannels], scale) as tf.Tensor4D,
      )
      this.biases.push(
        uniformWeights(rand, [outChannels], 0.1) as tf.Tensor1D,
      )
      inChannels = outChannels
    }
    this.layerNames = spec.stages.map((_, i) => `stage${i + 1}`)
    this.layerNames.push('pool')
  }

  /** Mid-level stage: the default export layer. */
  get defaultLayer(): string {
    return this.layerNames[Math.max(0, this.spec.stages.length - 2)]
  }

  /**
   * Forward a batch of [N, S, S, 3] images to the named layer and flatten
   * channel-major (channel, row, column).
   */
  forward(batch: tf.Tensor4D, layer: string): LayerActivation[] {
    const idx = this.layerNames.indexOf(layer)
    if (idx < 0) {
      throw new Error(
        `unknown layer ${layer}; available: ${this.layerNames.join(', ')}`,
      )
    }
    const wantPool = layer === 'pool'
    const depth = wantPool ? this.kernels.length : idx + 1
    const out = tf.tidy(() => {
      let x: tf.Tensor4D = batch
      for (let i = 0; i < depth; i++) {
        x = tf.relu(
          tf.add(tf.conv2d(x, this.kernels[i], 2, 'same'), this.biases[i]),
        ) as tf.Tensor4D
      }
      if (wantPool) {
        return tf.mean(x, [1, 2]) as tf.Tensor2D // [N, C]
      }
      return tf.transpose(x, [0, 3, 1, 2]) as tf.Tensor4D // NHWC -> NCHW
    })
    const shape = out.shape.slice(1)
    const data = out.dataSync() as Float32Array
    out.dispose()
    const per = shape.reduce((a, b) => a * b, 1)
    const result: LayerActivation[] = []
    for (let n = 0; n < batch.shape[0]; n++) {
      result.push({
        name: layer,
        shape: wantPool ? [shape[0], 1, 1] : [...shape],
        flat: data.slice(n * per, (n + 1) * per),
      })
    }
    return result
  }
}
