/**
 * Convergence and dissipation diagnostics: semilog energy decay with the
 * fitted rate line, and the backward sweep's feedback-residual history.
 *
 * Usage: node dist/diagnostics.js RUNDIR [OUTDIR]
 */

import { existsSync, mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { parsePlainCsv } from "./gridfield.js";
import { Svg, fmt } from "./svg.js";

const W = 640;
const H = 440;
const M = { left: 70, right: 30, top: 40, bottom: 52 };

interface Series {
  x: number[];
  y: number[];
}

function semilogPanel(
  series: Series,
  title: string,
  xlabel: string,
  ylabel: string,
  fitted?: { slope: number; intercept: number; label: string },
): string {
  const svg = new Svg(W, H);
  const logs = series.y.map((v) => Math.log10(Math.max(v, 1e-300)));
  const xLo = series.x[0];
  const xHi = series.x[series.x.length - 1];
  const yLo = Math.min(...logs);
  const yHi = Math.max(...logs);
  const pw = W - M.left - M.right;
  const ph = H - M.top - M.bottom;
  const sx = (x: number) => M.left + ((x - xLo) / (xHi - xLo || 1)) * pw;
  const sy = (ly: number) => M.top + ph - ((ly - yLo) / (yHi - yLo || 1)) * ph;

  svg.polyline(
    [
      [M.left, M.top],
      [M.left + pw, M.top],
      [M.left + pw, M.top + ph],
      [M.left, M.top + ph],
      [M.left, M.top],
    ],
    "#222222",
    1,
  );
  // decade gridlines
  for (let d = Math.ceil(yLo); d <= Math.floor(yHi); d++) {
    svg.line(M.left, sy(d), M.left + pw, sy(d), "#dddddd", 0.7);
    svg.text(M.left - 6, sy(d) + 3, `1e${d}`, 9, "end");
  }
  svg.polyline(
    series.x.map((x, i) => [sx(x), sy(logs[i])] as [number, number]),
    "#1f77b4",
    1.4,
  );
  if (fitted) {
    const lineY = (x: number) => (fitted.slope * x + fitted.intercept) / Math.LN10;
    svg.polyline(
      [
        [sx(xLo), sy(lineY(xLo))],
        [sx(xHi), sy(lineY(xHi))],
      ],
      "#d62728",
      1.2,
      ' stroke-dasharray="6,4"',
    );
    svg.text(M.left + 12, M.top + 18, fitted.label, 12, "start", ' fill="#d62728"');
  }
  svg.text(W / 2, 24, title, 15, "middle");
  svg.text(M.left + pw / 2, H - 14, xlabel, 12, "middle");
  svg.text(18, M.top + ph / 2, ylabel, 12, "middle", ` transform="rotate(-90 18 ${fmt(M.top + ph / 2)})"`);
  for (const t of [0, 0.5, 1]) {
    svg.text(M.left + t * pw, M.top + ph + 18, fmt(xLo + t * (xHi - xLo)).replace(/\.000$/, ""), 10, "middle");
  }
  return svg.render();
}

/** Least-squares slope of (1/2) ln E over the trailing window fraction. */
export function fitDecayRate(t: number[], E: number[], window = 0.5): number {
  const keep: Array<[number, number]> = [];
  for (let i = 0; i < t.length; i++) if (E[i] > 1e-14) keep.push([t[i], E[i]]);
  if (keep.length < 10) throw new Error("need at least 10 energy samples above 1e-14");
  const tEnd = keep[keep.length - 1][0];
  const t0 = tEnd - window * (tEnd - keep[0][0]);
  const sel = keep.filter(([tt]) => tt >= t0);
  const xs = sel.map(([tt]) => tt);
  const ys = sel.map(([, e]) => 0.5 * Math.log(e));
  const n = xs.length;
  const mx = xs.reduce((a, b) => a + b, 0) / n;
  const my = ys.reduce((a, b) => a + b, 0) / n;
  let num = 0;
  let den = 0;
  for (let i = 0; i < n; i++) {
    num += (xs[i] - mx) * (ys[i] - my);
    den += (xs[i] - mx) ** 2;
  }
  return -num / den;
}

export interface DiagnosticsResult {
  files: string[];
  gammaFitted: number;
  gammaRecorded: number | null;
}

export function renderDiagnostics(runDir: string, outDir: string): DiagnosticsResult {
  const files: string[] = [];
  mkdirSync(outDir, { recursive: true });
  let gammaFitted = NaN;
  let gammaRecorded: number | null = null;

  const energyPath = join(runDir, "energy.csv");
  if (!existsSync(energyPath)) {
    throw new Error(`run directory ${runDir} is missing: energy.csv`);
  }
  const energy = parsePlainCsv(energyPath);
  const tcol = energy.columns.indexOf("t");
  const ecol = energy.columns.indexOf("E");
  const t = energy.rows.map((r) => r[tcol]);
  const E = energy.rows.map((r) => r[ecol]);
  if (t.length === 0) throw new Error("energy.csv has no samples");
  gammaFitted = fitDecayRate(t, E);
  const recorded = energy.header.get("gamma_hat");
  gammaRecorded = recorded !== undefined ? Number(recorded) : null;

  // fitted line anchored at the window start in (t, 1/2 ln E) space
  const mid = t[Math.floor(t.length / 2)];
  const Emid = E[Math.floor(t.length / 2)];
  const slope = -2 * gammaFitted; // d(ln E)/dt
  const intercept = Math.log(Math.max(Emid, 1e-300)) - slope * mid;
  const energySvg = semilogPanel(
    { x: t, y: E },
    "energy decay under the optimal feedback",
    "t",
    "E(t)",
    { slope, intercept, label: `fitted rate: ${gammaFitted.toFixed(4)} (slope -2x)` },
  );
  const energyOut = join(outDir, "energy_decay.svg");
  writeFileSync(energyOut, energySvg);
  files.push(energyOut);

  const tracePath = join(runDir, "trace.csv");
  if (existsSync(tracePath)) {
    const trace = parsePlainCsv(tracePath);
    const it = trace.columns.indexOf("iteration");
    const res = trace.columns.indexOf("feedback_residual");
    const rows = trace.rows.filter((r) => Number.isFinite(r[res]) && r[res] > 0);
    const residSvg = semilogPanel(
      { x: rows.map((r) => r[it]), y: rows.map((r) => r[res]) },
      "backward sweep feedback residual",
      "sweep",
      "sup-norm feedback change",
    );
    const residOut = join(outDir, "feedback_residual.svg");
    writeFileSync(residOut, residSvg);
    files.push(residOut);
  }
  return { files, gammaFitted, gammaRecorded };
}

const isMain = process.argv[1]?.endsWith("diagnostics.js") ?? false;
if (isMain) {
  const [runDir, outDir] = [process.argv[2], process.argv[3] ?? join(process.argv[2] ?? ".", "figures")];
  if (!runDir) {
    console.error("usage: node dist/diagnostics.js RUNDIR [OUTDIR]");
    process.exit(1);
  }
  try {
    const result = renderDiagnostics(runDir, outDir);
    for (const f of result.files) console.log(f);
    console.log(`fitted decay rate: ${result.gammaFitted.toFixed(4)}` +
      (result.gammaRecorded !== null ? ` (recorded: ${result.gammaRecorded.toFixed(4)})` : ""));
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err));
    process.exit(1);
  }
}
