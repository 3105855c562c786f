import { existsSync, mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { renderFigure1 } from "../src/figure1.js";

const FIXTURE = join(__dirname, "fixtures", "case_study_small");
const PANELS = ["mu_heatmap.svg", "trajectories.svg", "v_surface.svg", "rho_surface.svg"];

describe("figure rendering", () => {
  it("emits the four panels from a run directory", () => {
    const out = mkdtempSync(join(tmpdir(), "fig-"));
    const result = renderFigure1(FIXTURE, out);
    expect(result.files).toHaveLength(4);
    for (const name of PANELS) {
      expect(existsSync(join(out, name))).toBe(true);
      const svg = readFileSync(join(out, name), "utf-8");
      expect(svg.startsWith("<svg")).toBe(true);
      expect(svg.trimEnd().endsWith("</svg>")).toBe(true);
    }
  });

  it("reports the multi-modality of the steady density", () => {
    const out = mkdtempSync(join(tmpdir(), "fig-"));
    const result = renderFigure1(FIXTURE, out);
    expect(result.rhoLocalMaxima).toBeGreaterThanOrEqual(2);
  });

  it("is deterministic: re-rendering reproduces identical bytes", () => {
    const out1 = mkdtempSync(join(tmpdir(), "fig-"));
    const out2 = mkdtempSync(join(tmpdir(), "fig-"));
    renderFigure1(FIXTURE, out1);
    renderFigure1(FIXTURE, out2);
    for (const name of PANELS) {
      expect(readFileSync(join(out1, name), "utf-8")).toBe(
        readFileSync(join(out2, name), "utf-8"),
      );
    }
  });

  it("an empty directory is refused with the expected file names", () => {
    const empty = mkdtempSync(join(tmpdir(), "empty-"));
    const out = mkdtempSync(join(tmpdir(), "fig-"));
    expect(() => renderFigure1(empty, out)).toThrow(
      /mu_inf\.csv, rho_inf\.csv, v_inf\.csv, paths_deterministic\.csv/,
    );
  });

  it("one-dimensional runs are refused", () => {
    const dir = mkdtempSync(join(tmpdir(), "run1d-"));
    const header =
      "# gridfield v1\n# axes: 1\n# axis0: lower=0.0 upper=1.0 count=3 spacing=0.5\n";
    writeFileSync(join(dir, "mu_inf.csv"), header + "# columns: x1,mu1\n0,0\n0.5,0\n1,0\n");
    writeFileSync(join(dir, "rho_inf.csv"), header + "# columns: x1,rho\n0,1\n0.5,1\n1,1\n");
    writeFileSync(join(dir, "v_inf.csv"), header + "# columns: x1,v\n0,0\n0.5,0\n1,0\n");
    writeFileSync(join(dir, "paths_deterministic.csv"), "traj,t,x1\n0,0,0.5\n");
    const out = mkdtempSync(join(tmpdir(), "fig-"));
    expect(() => renderFigure1(dir, out)).toThrow(/2-D grids only/);
  });
});
