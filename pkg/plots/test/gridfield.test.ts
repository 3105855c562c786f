import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import {
  at2d, countStrictLocalMaxima, parseGridField, parsePlainCsv, requireColumn,
} from "../src/gridfield.js";

const FIXTURE = join(__dirname, "fixtures", "case_study_small");

describe("grid field parsing", () => {
  it("reads the solver's header and data", () => {
    const field = parseGridField(join(FIXTURE, "mu_inf.csv"));
    expect(field.axes).toHaveLength(2);
    expect(field.axes[0].count).toBe(40);
    expect(field.axes[0].lower).toBe(-3);
    expect(field.axes[0].upper).toBe(3);
    expect(field.columns).toContain("mu1");
    const mu = requireColumn(field, "mu1");
    expect(mu).toHaveLength(1600);
    // feedback lives in the control box
    for (const v of mu) {
      expect(v).toBeGreaterThanOrEqual(-4);
      expect(v).toBeLessThanOrEqual(4);
    }
  });

  it("row-major indexing: last axis fastest", () => {
    const field = parseGridField(join(FIXTURE, "rho_inf.csv"));
    const x1 = requireColumn(field, "x1");
    const x2 = requireColumn(field, "x2");
    expect(x1[0]).toBe(-3);
    expect(x2[0]).toBe(-3);
    expect(x1[1]).toBe(-3); // x1 constant while x2 advances
    expect(x2[1]).toBeGreaterThan(-3);
    const rho = requireColumn(field, "rho");
    expect(at2d(field, rho, 3, 7)).toBe(rho[3 * 40 + 7]);
  });

  it("rejects files without a grid header", () => {
    const dir = mkdtempSync(join(tmpdir(), "gf-"));
    const bad = join(dir, "bad.csv");
    writeFileSync(bad, "a,b\n1,2\n");
    expect(() => parseGridField(bad)).toThrow(/missing header/);
  });

  it("rejects truncated data", () => {
    const dir = mkdtempSync(join(tmpdir(), "gf-"));
    const bad = join(dir, "short.csv");
    writeFileSync(
      bad,
      "# gridfield v1\n# axes: 1\n# axis0: lower=0.0 upper=1.0 count=3 spacing=0.5\n" +
        "# columns: x1,f\n0.0,1.0\n0.5,2.0\n",
    );
    expect(() => parseGridField(bad)).toThrow(/promises 3/);
  });

  it("missing columns are reported by name", () => {
    const field = parseGridField(join(FIXTURE, "mu_inf.csv"));
    expect(() => requireColumn(field, "nope")).toThrow(/missing column 'nope'/);
  });
});

describe("strict local maxima", () => {
  function synthetic(nx: number, ny: number, fill: (i: number, j: number) => number) {
    const data = new Float64Array(nx * ny);
    for (let i = 0; i < nx; i++) for (let j = 0; j < ny; j++) data[i * ny + j] = fill(i, j);
    const axes = [
      { lower: 0, upper: 1, count: nx, spacing: 1 / (nx - 1) },
      { lower: 0, upper: 1, count: ny, spacing: 1 / (ny - 1) },
    ];
    return { field: { axes, columns: ["f"], data: new Map([["f", data]]) }, data };
  }

  it("counts two separated bumps", () => {
    const { field, data } = synthetic(21, 21, (i, j) => {
      const bump = (ci: number, cj: number) =>
        Math.exp(-((i - ci) ** 2 + (j - cj) ** 2) / 6);
      return bump(5, 5) + bump(15, 15);
    });
    expect(countStrictLocalMaxima(field as never, data)).toBe(2);
  });

  it("a constant field has no strict maxima", () => {
    const { field, data } = synthetic(9, 9, () => 1.0);
    expect(countStrictLocalMaxima(field as never, data)).toBe(0);
  });

  it("a single peak counts once even at the boundary", () => {
    const { field, data } = synthetic(9, 9, (i, j) => -((i - 8) ** 2 + (j - 4) ** 2));
    expect(countStrictLocalMaxima(field as never, data)).toBe(1);
  });

  it("the case-study steady density is multi-modal", () => {
    const field = parseGridField(join(FIXTURE, "rho_inf.csv"));
    const rho = requireColumn(field, "rho");
    expect(countStrictLocalMaxima(field, rho)).toBeGreaterThanOrEqual(2);
  });
});

describe("plain csv", () => {
  it("parses the energy trace with its comment header", () => {
    const parsed = parsePlainCsv(join(FIXTURE, "energy.csv"));
    expect(parsed.columns).toEqual(["t", "E"]);
    expect(Number(parsed.header.get("gamma_hat"))).toBeGreaterThan(0);
    expect(parsed.rows.length).toBeGreaterThan(100);
    // energy is nonincreasing
    for (let i = 1; i < parsed.rows.length; i++) {
      expect(parsed.rows[i][1]).toBeLessThanOrEqual(parsed.rows[i - 1][1] + 1e-10);
    }
  });
});
