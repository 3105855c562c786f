import { describe, expect, it } from "vitest";

import { divergingColor, fmt, sequentialColor, Svg } from "../src/svg.js";

describe("svg primitives", () => {
  it("numbers are formatted stably", () => {
    expect(fmt(1 / 3)).toBe("0.333");
    expect(fmt(-0.0000001)).toBe("0.000");
    expect(fmt(Number.NaN)).toBe("0");
  });

  it("documents are well-formed", () => {
    const svg = new Svg(100, 80);
    svg.rect(1, 2, 3, 4, "#ff0000");
    svg.text(5, 6, "a < b & c");
    const out = svg.render();
    expect(out).toContain('width="100"');
    expect(out).toContain("a &lt; b &amp; c");
    expect((out.match(/<rect/g) ?? []).length).toBe(2); // background + one
    expect(out.trimEnd().endsWith("</svg>")).toBe(true);
  });

  it("color ramps clamp and hit their endpoints", () => {
    expect(divergingColor(-1)).toBe(divergingColor(0));
    expect(divergingColor(2)).toBe(divergingColor(1));
    expect(divergingColor(0)).toBe("#2166ac");
    expect(divergingColor(1)).toBe("#b2182b");
    expect(divergingColor(0.5)).toBe("#f7f7f7");
    expect(sequentialColor(0)).toBe("#440154");
    expect(sequentialColor(1)).toBe("#fde725");
  });
});
