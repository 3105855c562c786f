/**
 * Reader for the solver's self-describing grid-field CSV files.
 *
 * The '#'-prefixed header carries the axis bounds, node counts and
 * spacing; data rows are node coordinates followed by field columns in
 * row-major order (last axis fastest).
 */

import { readFileSync } from "node:fs";

export interface AxisSpec {
  lower: number;
  upper: number;
  count: number;
  spacing: number;
}

export interface GridField {
  axes: AxisSpec[];
  columns: string[];
  /** column name -> flat values (length = product of counts) */
  data: Map<string, Float64Array>;
}

export function parseGridField(path: string): GridField {
  const text = readFileSync(path, "utf-8");
  const axes: AxisSpec[] = [];
  let columns: string[] | null = null;
  const rows: number[][] = [];

  for (const raw of text.split("\n")) {
    const line = raw.trim();
    if (line.length === 0) continue;
    if (line.startsWith("#")) {
      const body = line.slice(1).trim();
      if (/^axis\d+:/.test(body)) {
        const fields = new Map(
          body
            .slice(body.indexOf(":") + 1)
            .trim()
            .split(/\s+/)
            .map((kv) => kv.split("=") as [string, string]),
        );
        axes.push({
          lower: Number(fields.get("lower")),
          upper: Number(fields.get("upper")),
          count: Number(fields.get("count")),
          spacing: Number(fields.get("spacing")),
        });
      } else if (body.startsWith("columns:")) {
        columns = body
          .slice("columns:".length)
          .split(",")
          .map((c) => c.trim());
      }
      continue;
    }
    rows.push(line.split(",").map(Number));
  }

  if (columns === null || axes.length === 0) {
    throw new Error(`${path}: not a grid field file (missing header)`);
  }
  const m = axes.reduce((acc, a) => acc * a.count, 1);
  if (rows.length !== m) {
    throw new Error(`${path}: ${rows.length} rows but header promises ${m}`);
  }
  const data = new Map<string, Float64Array>();
  columns.forEach((name, j) => {
    const vals = new Float64Array(m);
    for (let i = 0; i < m; i++) vals[i] = rows[i][j];
    data.set(name, vals);
  });
  return { axes, columns, data };
}

export function requireColumn(field: GridField, name: string): Float64Array {
  const vals = field.data.get(name);
  if (!vals) {
    throw new Error(`missing column '${name}' (have: ${field.columns.join(", ")})`);
  }
  return vals;
}

/** Value at multi-index (i, j) of a 2-D field stored row-major. */
export function at2d(field: GridField, values: Float64Array, i: number, j: number): number {
  return values[i * field.axes[1].count + j];
}

/**
 * Count strict local maxima of a 2-D field over the 8-neighborhood.
 * Boundary nodes participate with their existing neighbors.
 */
export function countStrictLocalMaxima(field: GridField, values: Float64Array): number {
  if (field.axes.length !== 2) {
    throw new Error("local-maxima counting is defined for 2-D grids only");
  }
  const [nx, ny] = [field.axes[0].count, field.axes[1].count];
  let count = 0;
  for (let i = 0; i < nx; i++) {
    for (let j = 0; j < ny; j++) {
      const v = at2d(field, values, i, j);
      let isMax = true;
      for (let di = -1; di <= 1 && isMax; di++) {
        for (let dj = -1; dj <= 1; dj++) {
          if (di === 0 && dj === 0) continue;
          const ii = i + di;
          const jj = j + dj;
          if (ii < 0 || jj < 0 || ii >= nx || jj >= ny) continue;
          if (at2d(field, values, ii, jj) >= v) {
            isMax = false;
            break;
          }
        }
      }
      if (isMax) count++;
    }
  }
  return count;
}

/** Plain CSV with one optional '# key: value' comment header per line. */
export function parsePlainCsv(path: string): {
  header: Map<string, string>;
  columns: string[];
  rows: number[][];
} {
  const text = readFileSync(path, "utf-8");
  const header = new Map<string, string>();
  let columns: string[] | null = null;
  const rows: number[][] = [];
  for (const raw of text.split("\n")) {
    const line = raw.trim();
    if (line.length === 0) continue;
    if (line.startsWith("#")) {
      const body = line.slice(1).trim();
      const colon = body.indexOf(":");
      if (colon > 0) header.set(body.slice(0, colon).trim(), body.slice(colon + 1).trim());
      continue;
    }
    if (columns === null) {
      columns = line.split(",").map((c) => c.trim());
      continue;
    }
    rows.push(line.split(",").map(Number));
  }
  if (columns === null) throw new Error(`${path}: empty CSV`);
  return { header, columns, rows };
}
