#!/usr/bin/env node
/** mdpmix-plots: render an experiment CSV to an SVG figure.
 *
 *   mdpmix-plots <kind> --in results.csv --out figure.svg
 */

import { writeFileSync } from "node:fs";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { CsvFormatError, readSchemaCsv } from "./csv.js";
import { buildOption, FIGURE_KINDS, type FigureKind } from "./figures.js";
import { renderSvg } from "./render.js";

export async function main(argv: string[]): Promise<number> {
  const args = await yargs(argv)
    .command("$0 <kind>", "render a figure from an mdpmix CSV", (y) =>
      y.positional("kind", {
        describe: "figure to render",
        choices: FIGURE_KINDS,
        demandOption: true,
      }),
    )
    .option("in", {
      type: "string",
      demandOption: true,
      describe: "input CSV (must carry a # schema= header line)",
    })
    .option("out", { type: "string", demandOption: true, describe: "output SVG" })
    .option("width", { type: "number", default: 800 })
    .option("height", { type: "number", default: 500 })
    .strict()
    .exitProcess(false)
    .parseAsync();

  try {
    const csv = readSchemaCsv(args.in);
    const option = buildOption(args.kind as FigureKind, csv);
    writeFileSync(args.out, renderSvg(option, args.width, args.height));
  } catch (err) {
    if (err instanceof CsvFormatError) {
      process.stderr.write(`error: ${err.message}\n`);
      return 1;
    }
    throw err;
  }
  return 0;
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (invokedDirectly) {
  main(hideBin(process.argv)).then((code) => {
    process.exitCode = code;
  });
}
