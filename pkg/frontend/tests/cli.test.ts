import { describe, expect, it } from "vitest";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { fileURLToPath } from "node:url";
import { main } from "../src/cli.js";
import { renderSvg } from "../src/render.js";
import { readSchemaCsv } from "../src/csv.js";
import { buildOption } from "../src/figures.js";

const fixture = (name: string) =>
  fileURLToPath(new URL(`./fixtures/${name}`, import.meta.url));

describe("renderSvg", () => {
  it("produces an SVG document for every figure kind", () => {
    const inputs = {
      "error-curve": "results.csv",
      "dim-curve": "results.csv",
      "eigen-energy": "eigen.csv",
      "dist-histogram": "disthist.csv",
      "block-matrix": "block.csv",
      "loglik-scatter": "loglik.csv",
    } as const;
    for (const [kind, file] of Object.entries(inputs)) {
      const option = buildOption(
        kind as keyof typeof inputs,
        readSchemaCsv(fixture(file)),
      );
      const svg = renderSvg(option);
      expect(svg.startsWith("<svg")).toBe(true);
      expect(svg).toContain("</svg>");
    }
  });
});

describe("cli", () => {
  it("writes an SVG file and exits 0", async () => {
    const out = join(mkdtempSync(join(tmpdir(), "mdpmix-plots-")), "fig.svg");
    const code = await main([
      "eigen-energy",
      "--in",
      fixture("eigen.csv"),
      "--out",
      out,
    ]);
    expect(code).toBe(0);
    expect(readFileSync(out, "utf8")).toContain("</svg>");
  });

  it("exits non-zero on a header-only CSV", async () => {
    const out = join(mkdtempSync(join(tmpdir(), "mdpmix-plots-")), "fig.svg");
    const code = await main([
      "error-curve",
      "--in",
      fixture("header_only.csv"),
      "--out",
      out,
    ]);
    expect(code).toBe(1);
  });

  it("exits non-zero on a schema mismatch", async () => {
    const out = join(mkdtempSync(join(tmpdir(), "mdpmix-plots-")), "fig.svg");
    const code = await main([
      "block-matrix",
      "--in",
      fixture("results.csv"),
      "--out",
      out,
    ]);
    expect(code).toBe(1);
  });
});
