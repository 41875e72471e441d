/** Versioned-CSV reader for the mdpmix experiment outputs.
 *
 * Every file starts with a `# schema=<name>` comment line followed by a
 * regular CSV header.  Values stay strings here; the figure builders convert
 * exactly the fields they plot, so plotted numbers are bit-equal to the file.
 */

import { readFileSync } from "node:fs";
import Papa from "papaparse";

export interface SchemaCsv {
  schema: string;
  columns: string[];
  /** Data rows keyed by column name (for matrix schemas with repeated
   * column labels, the last column wins — use `cells` there instead). */
  rows: Record<string, string>[];
  /** Data rows as positional arrays, same order as `columns`. */
  cells: string[][];
}

export class CsvFormatError extends Error {}

export function readSchemaCsv(path: string): SchemaCsv {
  const text = readFileSync(path, "utf8");
  const newline = text.indexOf("\n");
  if (newline < 0 || !text.startsWith("# schema=")) {
    throw new CsvFormatError(`${path}: missing "# schema=" header line`);
  }
  const schema = text.slice("# schema=".length, newline).trim();
  const parsed = Papa.parse<string[]>(text.slice(newline + 1), {
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const first = parsed.errors[0];
    throw new CsvFormatError(`${path}: ${first.message} (row ${first.row})`);
  }
  if (parsed.data.length === 0) {
    throw new CsvFormatError(`${path}: missing CSV header row`);
  }
  const [columns, ...cells] = parsed.data;
  const rows = cells.map((cell) =>
    Object.fromEntries(columns.map((name, i) => [name, cell[i] ?? ""])),
  );
  return { schema, columns, rows, cells };
}

/** Raise with a column diff when the file does not match the expected shape. */
export function expectSchema(
  csv: SchemaCsv,
  schema: string,
  requiredColumns: string[],
): void {
  if (csv.schema !== schema) {
    throw new CsvFormatError(
      `schema mismatch: file has "${csv.schema}", figure needs "${schema}"`,
    );
  }
  const missing = requiredColumns.filter((c) => !csv.columns.includes(c));
  if (missing.length > 0) {
    throw new CsvFormatError(
      `missing columns [${missing.join(", ")}]; file has [${csv.columns.join(", ")}]`,
    );
  }
  if (csv.rows.length === 0) {
    throw new CsvFormatError("no data rows (header-only CSV)");
  }
}
