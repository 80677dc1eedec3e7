import { execFileSync } from 'child_process'
import * as fs from 'fs'
import * as os from 'os'
import * as path from 'path'
import { PNG } from 'pngjs'
import { afterAll, beforeAll, describe, expect, it } from 'vitest'

import { mulberry32 } from '../src/backbone'
import { exportFeatures } from '../src/export'
import { decodeSpf } from '../src/spf'

let root: string

function writePng(filePath: string, width: number, height: number, seed: number) {
  const png = new PNG({ width, height })
  const rand = mulberry32(seed)
  for (let p = 0; p < width * height; p++) {
    png.data[p * 4] = Math.floor(rand() * 256)
    png.data[p * 4 + 1] = Math.floor(rand() * 256)
    png.data[p * 4 + 2] = Math.floor(rand() * 256)
    png.data[p * 4 + 3] = 255
  }
  fs.writeFileSync(filePath, PNG.sync.write(png))
}

function makeImageDir(dir: string, count: number, offset = 0) {
  fs.mkdirSync(dir, { recursive: true })
  for (let i = 0; i < count; i++) {
    writePng(path.join(dir, `frame_${String(i).padStart(3, '0')}.png`),
             80, 60, 9000 + offset + i)
  }
}

function inspectWithEngine(manifestPath: string): {
  dim: number
  warnings: string[]
  conditions: { condition_id: number; frames: number }[]
} {
  const out = execFileSync(
    'python3',
    ['-m', 'seqplace.cli', 'inspect', manifestPath],
    { encoding: 'utf-8' },
  )
  return JSON.parse(out)
}

beforeAll(() => {
  root = fs.mkdtempSync(path.join(os.tmpdir(), 'spf-exporter-'))
  makeImageDir(path.join(root, 'images'), 20)
})

afterAll(() => {
  fs.rmSync(root, { recursive: true, force: true })
})

describe('exportFeatures', () => {
  it('round-trips through the engine with matching header and zero warnings', () => {
    const outPath = path.join(root, 'day.spf')
    const manifest = path.join(root, 'manifest.json')
    const result = exportFeatures({
      imageDir: path.join(root, 'images'),
      outPath,
      conditionName: 'day',
      conditionId: 0,
      manifestPath: manifest,
      log: () => {},
    })
    expect(result.count).toBe(20)
    expect(result.dim).toBeGreaterThan(0)

    const decoded = decodeSpf(fs.readFileSync(outPath))
    expect(decoded.dim).toBe(result.dim)
    expect(decoded.conditionId).toBe(0)
    expect(decoded.records.map((r) => r.frameId)).toEqual(
      Array.from({ length: 20 }, (_, i) => i),
    )

    const report = inspectWithEngine(manifest)
    expect(report.dim).toBe(result.dim)
    expect(report.warnings).toEqual([])
    expect(report.conditions).toHaveLength(1)
    expect(report.conditions[0].frames).toBe(20)
  }, 120_000)

  it('is bit-identical across runs', () => {
    const out1 = path.join(root, 'run1.spf')
    const out2 = path.join(root, 'run2.spf')
    exportFeatures({
      imageDir: path.join(root, 'images'), outPath: out1,
      conditionName: 'a', conditionId: 1, log: () => {},
    })
    exportFeatures({
      imageDir: path.join(root, 'images'), outPath: out2,
      conditionName: 'a', conditionId: 1, log: () => {},
    })
    expect(fs.readFileSync(out1).equals(fs.readFileSync(out2))).toBe(true)
  }, 120_000)

  it('assigns sequential frame ids in filename order', () => {
    const dir = path.join(root, 'ordered')
    fs.mkdirSync(dir, { recursive: true })
    writePng(path.join(dir, 'b.png'), 32, 32, 1)
    writePng(path.join(dir, 'a.png'), 32, 32, 2)
    writePng(path.join(dir, 'c.png'), 32, 32, 3)
    const outPath = path.join(root, 'ordered.spf')
    const result = exportFeatures({
      imageDir: dir, outPath, conditionName: 'x', conditionId: 2, log: () => {},
    })
    expect(result.count).toBe(3)
    // a.png must come first: re-export only a.png and compare record 0
    const singleDir = path.join(root, 'single')
    fs.mkdirSync(singleDir, { recursive: true })
    fs.copyFileSync(path.join(dir, 'a.png'), path.join(singleDir, 'a.png'))
    const singleOut = path.join(root, 'single.spf')
    exportFeatures({
      imageDir: singleDir, outPath: singleOut, conditionName: 'x',
      conditionId: 2, log: () => {},
    })
    const all = decodeSpf(fs.readFileSync(outPath))
    const one = decodeSpf(fs.readFileSync(singleOut))
    expect(Buffer.from(all.records[0].features.buffer).equals(
      Buffer.from(one.records[0].features.buffer))).toBe(true)
  }, 120_000)

  it('skips unreadable images with a gap report', () => {
    const dir = path.join(root, 'partial')
    makeImageDir(dir, 4, 500)
    fs.writeFileSync(path.join(dir, 'frame_001.png'), 'not a png at all')
    const messages: string[] = []
    const result = exportFeatures({
      imageDir: dir,
      outPath: path.join(root, 'partial.spf'),
      conditionName: 'p',
      conditionId: 3,
      log: (m) => messages.push(m),
    })
    expect(result.count).toBe(3)
    expect(result.skipped).toEqual(['frame_001.png'])
    expect(messages.some((m) => m.includes('gap report'))).toBe(true)
  }, 120_000)

  it('rejects folders without images', () => {
    const dir = path.join(root, 'empty')
    fs.mkdirSync(dir, { recursive: true })
    expect(() =>
      exportFeatures({
        imageDir: dir, outPath: path.join(root, 'never.spf'),
        conditionName: 'e', conditionId: 4, log: () => {},
      }),
    ).toThrow(/no .png images/)
  })

  it('different backbone layers give different dimensions', () => {
    const out = path.join(root, 'pool.spf')
    const result = exportFeatures({
      imageDir: path.join(root, 'images'), outPath: out,
      conditionName: 'pool', conditionId: 5, layer: 'pool', log: () => {},
    })
    expect(result.dim).toBe(128) // channels of the last stage
    expect(result.activationShape).toEqual([128, 1, 1])
  }, 120_000)
})
