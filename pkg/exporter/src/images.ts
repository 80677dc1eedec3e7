/**
 * PNG decoding and deterministic preprocessing: aspect-preserving center
 * crop (or plain stretch) followed by bilinear resize to the backbone's
 * input size, RGB scaled to [0, 1].
 */

import * as fs from 'fs'
import * as tf from '@tensorflow/tfjs'
import { PNG } from 'pngjs'

export type ResizePolicy = 'center-crop' | 'stretch'

export interface DecodedImage {
  width: number
  height: number
  /** RGB, row-major, [0, 1] */
  rgb: Float32Array
}

export function decodePng(filePath: string): DecodedImage {
  const png = PNG.sync.read(fs.readFileSync(filePath))
  const { width, height, data } = png
  const rgb = new Float32Array(width * height * 3)
  for (let p = 0; p < width * height; p++) {
    rgb[p * 3] = data[p * 4] / 255
    rgb[p * 3 + 1] = data[p * 4 + 1] / 255
    rgb[p * 3 + 2] = data[p * 4 + 2] / 255
  }
  return { width, height, rgb }
}

export function toInputTensor(
  image: DecodedImage,
  inputSize: number,
  policy: ResizePolicy,
): tf.Tensor3D {
  return tf.tidy(() => {
    let x = tf.tensor3d(image.rgb, [image.height, image.width, 3])
    if (policy === 'center-crop' && image.width !== image.height) {
      const side = Math.min(image.width, image.height)
      const top = Math.floor((image.height - side) / 2)
      const left = Math.floor((image.width - side) / 2)
      x = tf.slice(x, [top, left, 0], [side, side, 3])
    }
    if (x.shape[0] !== inputSize || x.shape[1] !== inputSize) {
      x = tf.image.resizeBilinear(x, [inputSize, inputSize])
    }
    return x
  })
}
