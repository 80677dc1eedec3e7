#!/usr/bin/env node
/** Command-line wrapper around the export job. */

import yargs from 'yargs'
import { hideBin } from 'yargs/helpers'

import { DEFAULT_SPEC } from './backbone'
import { ResizePolicy } from './images'
import { exportFeatures } from './export'

const argv = yargs(hideBin(process.argv))
  .option('images', { type: 'string', demandOption: true,
                      describe: 'Directory of .png frames (filename order)' })
  .option('out', { type: 'string', demandOption: true,
                   describe: 'Output feature file path' })
  .option('condition', { type: 'string', default: 'condition0',
                         describe: 'Human-readable condition name' })
  .option('condition-id', { type: 'number', default: 0 })
  .option('layer', { type: 'string',
                     describe: 'Backbone layer to export (default: mid stage)' })
  .option('batch-size', { type: 'number', default: 8 })
  .option('resize', { choices: ['center-crop', 'stretch'] as const,
                      default: 'center-crop' as ResizePolicy })
  .option('manifest', { type: 'string',
                        describe: 'Manifest to create or update' })
  .option('seed', { type: 'number', default: DEFAULT_SPEC.seed,
                    describe: 'Backbone weight seed' })
  .strict()
  .parseSync()

try {
  const result = exportFeatures({
    imageDir: argv.images,
    outPath: argv.out,
    conditionName: argv.condition,
    conditionId: argv['condition-id'],
    layer: argv.layer,
    batchSize: argv['batch-size'],
    resizePolicy: argv.resize,
    manifestPath: argv.manifest,
    backbone: { ...DEFAULT_SPEC, seed: argv.seed },
  })
  console.log(JSON.stringify(result, null, 2))
} catch (err) {
  console.error(JSON.stringify({ error: (err as Error).message }))
  process.exit(1)
}
