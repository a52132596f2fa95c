import type { CoincidenceResult, HistogramResult } from "./types.js";

export interface Bar {
  x: number;
  y: number;
  width: number;
  height: number;
  count: number;
  centerPs: number;
}

// Pure geometry for the counter-graph bars. Render-only contract: bar
// heights are a fixed linear map of the payload counts, nothing is rebinned
// or smoothed client-side.
export function computeBars(hist: HistogramResult, plotWidth: number, plotHeight: number): Bar[] {
  const counts = hist.counts;
  if (counts.length === 0) return [];
  const max = Math.max(...counts, 1);
  const barWidth = plotWidth / counts.length;
  return counts.map((count, i) => {
    const height = (count / max) * plotHeight;
    return {
      x: i * barWidth,
      y: plotHeight - height,
      width: barWidth,
      height,
      count,
      centerPs: hist.origin_ps + i * hist.bin_width_ps + Math.floor(hist.bin_width_ps / 2),
    };
  });
}

interface Canvas2dLike {
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
  fillStyle: string | CanvasGradient | CanvasPattern;
  font: string;
}

export function drawHistogram(
  ctx: Canvas2dLike,
  hist: HistogramResult,
  width: number,
  height: number,
): Bar[] {
  const axis = 18; // pixels reserved for tick labels
  const bars = computeBars(hist, width, height - axis);
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#2563eb";
  for (const bar of bars) {
    ctx.fillRect(bar.x, bar.y, Math.max(bar.width - 1, 1), bar.height);
  }
  ctx.fillStyle = "#555";
  ctx.font = "10px sans-serif";
  if (bars.length > 0) {
    const first = bars[0];
    const last = bars[bars.length - 1];
    ctx.fillText(`${first.centerPs} ps`, 2, height - 4);
    ctx.fillText(`${last.centerPs} ps`, Math.max(width - 70, 0), height - 4);
  }
  return bars;
}

const rateFmt = new Intl.NumberFormat("en-US", { maximumFractionDigits: 1 });

// Coincidence summary lines, exactly the payload numbers formatted.
export function coincidenceSummary(result: CoincidenceResult): Array<[string, string]> {
  return [
    ["channel rate A", `${rateFmt.format(result.rate_a_hz)} /s`],
    ["channel rate B", `${rateFmt.format(result.rate_b_hz)} /s`],
    ["coincidence rate Cc", `${rateFmt.format(result.cc_hz)} /s`],
    ["accidental rate Acc", `${rateFmt.format(result.acc_hz)} /s`],
    ["CAR", result.car === null ? "undefined (no accidentals)" : rateFmt.format(result.car)],
    ["peak delay", `${result.peak_delay_ps} ps`],
  ];
}
