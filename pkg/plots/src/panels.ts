/**
 * Panel renderers: 2-D heatmap, trajectory overlay, and an isometric
 * surface with painter's-algorithm quads. All scales are fixed per
 * panel kind so rendering is deterministic for identical inputs.
 */

import { at2d, type GridField } from "./gridfield.js";
import { Svg, divergingColor, fmt, sequentialColor, TRAJECTORY_COLORS } from "./svg.js";

const W = 560;
const H = 520;
const MARGIN = { left: 64, right: 88, top: 44, bottom: 52 };

export interface PanelSpec {
  title: string;
  xlabel: string;
  ylabel: string;
}

function plotArea() {
  return {
    x0: MARGIN.left,
    y0: MARGIN.top,
    w: W - MARGIN.left - MARGIN.right,
    h: H - MARGIN.top - MARGIN.bottom,
  };
}

function drawFrame(svg: Svg, spec: PanelSpec, xlim: [number, number], ylim: [number, number]): void {
  const a = plotArea();
  svg.polyline(
    [
      [a.x0, a.y0],
      [a.x0 + a.w, a.y0],
      [a.x0 + a.w, a.y0 + a.h],
      [a.x0, a.y0 + a.h],
      [a.x0, a.y0],
    ],
    "#222222",
    1,
  );
  svg.text(W / 2, 26, spec.title, 15, "middle");
  svg.text(a.x0 + a.w / 2, H - 14, spec.xlabel, 12, "middle");
  svg.text(16, a.y0 + a.h / 2, spec.ylabel, 12, "middle", ` transform="rotate(-90 16 ${fmt(a.y0 + a.h / 2)})"`);
  for (const t of [0, 0.5, 1]) {
    svg.text(a.x0 + t * a.w, a.y0 + a.h + 18, fmt(xlim[0] + t * (xlim[1] - xlim[0])).replace(/\.000$/, ""), 10, "middle");
    svg.text(a.x0 - 8, a.y0 + a.h - t * a.h + 4, fmt(ylim[0] + t * (ylim[1] - ylim[0])).replace(/\.000$/, ""), 10, "end");
  }
}

function colorbar(svg: Svg, lo: number, hi: number, color: (t: number) => string, label: string): void {
  const a = plotArea();
  const x = a.x0 + a.w + 18;
  const steps = 64;
  for (let k = 0; k < steps; k++) {
    const t = k / (steps - 1);
    svg.rect(x, a.y0 + a.h - ((k + 1) * a.h) / steps, 14, a.h / steps + 0.5, color(t));
  }
  svg.text(x + 18, a.y0 + 10, fmt(hi).replace(/\.000$/, ""), 10);
  svg.text(x + 18, a.y0 + a.h, fmt(lo).replace(/\.000$/, ""), 10);
  svg.text(x + 7, a.y0 - 8, label, 11, "middle");
}

function require2d(field: GridField): void {
  if (field.axes.length !== 2) {
    throw new Error("2-D grids only: this panel needs a two-axis grid field");
  }
}

export function renderHeatmap(field: GridField, values: Float64Array, spec: PanelSpec): string {
  require2d(field);
  const svg = new Svg(W, H);
  const a = plotArea();
  const [ax, ay] = field.axes;
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  // symmetric range for signed fields keeps the diverging scale honest
  const bound = Math.max(Math.abs(lo), Math.abs(hi));
  const span = 2 * bound || 1;
  const cw = a.w / ax.count;
  const ch = a.h / ay.count;
  for (let i = 0; i < ax.count; i++) {
    for (let j = 0; j < ay.count; j++) {
      const t = (at2d(field, values, i, j) + bound) / span;
      // x1 runs along the horizontal axis, x2 along the vertical
      svg.rect(a.x0 + i * cw, a.y0 + a.h - (j + 1) * ch, cw + 0.5, ch + 0.5, divergingColor(t));
    }
  }
  drawFrame(svg, spec, [ax.lower, ax.upper], [ay.lower, ay.upper]);
  colorbar(svg, -bound, bound, divergingColor, "u");
  return svg.render();
}

export interface Trajectory {
  points: Array<[number, number]>;
}

export function renderTrajectories(
  box: { xlim: [number, number]; ylim: [number, number] },
  trajectories: Trajectory[],
  spec: PanelSpec,
): string {
  const svg = new Svg(W, H);
  const a = plotArea();
  const sx = (x: number) => a.x0 + ((x - box.xlim[0]) / (box.xlim[1] - box.xlim[0])) * a.w;
  const sy = (y: number) => a.y0 + a.h - ((y - box.ylim[0]) / (box.ylim[1] - box.ylim[0])) * a.h;
  trajectories.forEach((traj, k) => {
    const pts = traj.points.map(([x, y]) => [sx(x), sy(y)] as [number, number]);
    svg.polyline(pts, TRAJECTORY_COLORS[k % TRAJECTORY_COLORS.length], 1.1);
  });
  // initial conditions marked on top
  trajectories.forEach((traj) => {
    const [x0, y0] = traj.points[0];
    svg.circle(sx(x0), sy(y0), 4.0, "#d62728");
  });
  drawFrame(svg, spec, box.xlim, box.ylim);
  return svg.render();
}

/**
 * Isometric surface: project (x, y, z) to the plane, draw cell quads
 * far-to-near colored by height.  Grids finer than ~120 nodes per axis
 * are strided down for a bounded polygon count.
 */
export function renderSurface(field: GridField, values: Float64Array, spec: PanelSpec): string {
  require2d(field);
  const svg = new Svg(W, H);
  const [ax, ay] = field.axes;
  const si = Math.max(1, Math.ceil(ax.count / 120));
  const sj = Math.max(1, Math.ceil(ay.count / 120));
  const is: number[] = [];
  for (let i = 0; i < ax.count; i += si) is.push(i);
  if (is[is.length - 1] !== ax.count - 1) is.push(ax.count - 1);
  const js: number[] = [];
  for (let j = 0; j < ay.count; j += sj) js.push(j);
  if (js[js.length - 1] !== ay.count - 1) js.push(ay.count - 1);

  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  const zspan = hi - lo || 1;

  // unit-square coordinates -> isometric screen coordinates
  const cos30 = Math.cos(Math.PI / 6);
  const sin30 = Math.sin(Math.PI / 6);
  const zscale = 0.55;
  const proj = (fx: number, fy: number, fz: number): [number, number] => [
    (fx - fy) * cos30,
    (fx + fy) * sin30 - fz * zscale,
  ];
  // bounding box of the projection for scaling to the canvas
  let pxLo = Infinity;
  let pxHi = -Infinity;
  let pyLo = Infinity;
  let pyHi = -Infinity;
  for (const [fx, fy, fz] of [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
  ] as Array<[number, number, number]>) {
    const [px, py] = proj(fx, fy, fz);
    pxLo = Math.min(pxLo, px);
    pxHi = Math.max(pxHi, px);
    pyLo = Math.min(pyLo, py);
    pyHi = Math.max(pyHi, py);
  }
  const a = plotArea();
  const scale = Math.min(a.w / (pxHi - pxLo), a.h / (pyHi - pyLo));
  const sx = (px: number) => a.x0 + (px - pxLo) * scale;
  const sy = (py: number) => a.y0 + (py - pyLo) * scale;

  const fx = (i: number) => i / (ax.count - 1);
  const fy = (j: number) => j / (ay.count - 1);
  const fz = (i: number, j: number) => (at2d(field, values, i, j) - lo) / zspan;

  // painter's algorithm: cells far from the viewer (large fx+fy) first
  for (let a1 = is.length - 2; a1 >= 0; a1--) {
    for (let b1 = js.length - 2; b1 >= 0; b1--) {
      const [i0, i1] = [is[a1], is[a1 + 1]];
      const [j0, j1] = [js[b1], js[b1 + 1]];
      const corners: Array<[number, number]> = [
        [i0, j0],
        [i1, j0],
        [i1, j1],
        [i0, j1],
      ].map(([i, j]) => {
        const [px, py] = proj(fx(i), fy(j), fz(i, j));
        return [sx(px), sy(py)];
      });
      const zmid = (fz(i0, j0) + fz(i1, j0) + fz(i1, j1) + fz(i0, j1)) / 4;
      svg.polygon(corners, sequentialColor(zmid), "#00000022", 0.3);
    }
  }
  svg.text(W / 2, 26, spec.title, 15, "middle");
  svg.text(W / 2, H - 14, `${spec.xlabel} / ${spec.ylabel} plane, height = field value`, 11, "middle");
  colorbar(svg, lo, hi, sequentialColor, "z");
  return svg.render();
}
