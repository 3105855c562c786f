/**
 * Render the four case-study panels from a solve + simulate run
 * directory: feedback heatmap, noiseless trajectories over the domain,
 * value-function surface, steady-density surface.
 *
 * Usage: node dist/figure1.js RUNDIR [OUTDIR]
 */

import { existsSync, mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { countStrictLocalMaxima, parseGridField, parsePlainCsv, requireColumn } from "./gridfield.js";
import { renderHeatmap, renderSurface, renderTrajectories, type Trajectory } from "./panels.js";

const REQUIRED = ["mu_inf.csv", "rho_inf.csv", "v_inf.csv", "paths_deterministic.csv"];

export interface Figure1Result {
  files: string[];
  rhoLocalMaxima: number;
}

export function renderFigure1(runDir: string, outDir: string): Figure1Result {
  const missing = REQUIRED.filter((name) => !existsSync(join(runDir, name)));
  if (missing.length > 0) {
    throw new Error(`run directory ${runDir} is missing: ${missing.join(", ")}`);
  }
  mkdirSync(outDir, { recursive: true });

  const mu = parseGridField(join(runDir, "mu_inf.csv"));
  const rho = parseGridField(join(runDir, "rho_inf.csv"));
  const v = parseGridField(join(runDir, "v_inf.csv"));
  for (const f of [mu, rho, v]) {
    if (f.axes.length !== 2) {
      throw new Error("2-D grids only: figure panels need two-axis grid fields");
    }
  }

  const paths = parsePlainCsv(join(runDir, "paths_deterministic.csv"));
  const ti = paths.columns.indexOf("traj");
  const xi = paths.columns.indexOf("x1");
  const yi = paths.columns.indexOf("x2");
  if (ti < 0 || xi < 0 || yi < 0) {
    throw new Error("paths_deterministic.csv must carry traj,x1,x2 columns");
  }
  const byTraj = new Map<number, Trajectory>();
  for (const row of paths.rows) {
    const id = row[ti];
    if (!byTraj.has(id)) byTraj.set(id, { points: [] });
    byTraj.get(id)!.points.push([row[xi], row[yi]]);
  }
  const trajectories = [...byTraj.keys()].sort((a, b) => a - b).map((k) => byTraj.get(k)!);

  const [ax, ay] = mu.axes;
  const files: string[] = [];
  const put = (name: string, svg: string) => {
    const path = join(outDir, name);
    writeFileSync(path, svg);
    files.push(path);
  };

  put(
    "mu_heatmap.svg",
    renderHeatmap(mu, requireColumn(mu, "mu1"), {
      title: "optimal feedback law",
      xlabel: "x1",
      ylabel: "x2",
    }),
  );
  put(
    "trajectories.svg",
    renderTrajectories(
      { xlim: [ax.lower, ax.upper], ylim: [ay.lower, ay.upper] },
      trajectories,
      { title: "noiseless closed-loop paths", xlabel: "x1", ylabel: "x2" },
    ),
  );
  put(
    "v_surface.svg",
    renderSurface(v, requireColumn(v, "v"), {
      title: "value function",
      xlabel: "x1",
      ylabel: "x2",
    }),
  );
  const rhoValues = requireColumn(rho, "rho");
  put(
    "rho_surface.svg",
    renderSurface(rho, rhoValues, {
      title: "steady-state density",
      xlabel: "x1",
      ylabel: "x2",
    }),
  );
  return { files, rhoLocalMaxima: countStrictLocalMaxima(rho, rhoValues) };
}

const isMain = process.argv[1]?.endsWith("figure1.js") ?? false;
if (isMain) {
  const [runDir, outDir] = [process.argv[2], process.argv[3] ?? join(process.argv[2] ?? ".", "figures")];
  if (!runDir) {
    console.error("usage: node dist/figure1.js RUNDIR [OUTDIR]");
    process.exit(1);
  }
  try {
    const result = renderFigure1(runDir, outDir);
    for (const f of result.files) console.log(f);
    console.log(`steady-density strict local maxima: ${result.rhoLocalMaxima}`);
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    process.exit(1);
  }
}
