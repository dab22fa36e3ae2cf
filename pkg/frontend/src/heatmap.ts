/** Per-component difference heatmaps.
 *
 * The reconstruction is additive, so |frame_t - frame_{t-1}| is exactly
 * the contribution of component t (after display clamping). Pixels are
 * RGBA byte arrays as produced by canvas ImageData.
 */

export function diffHeatmap(
  a: Uint8ClampedArray,
  b: Uint8ClampedArray,
  gain = 8,
): Uint8ClampedArray {
  if (a.length !== b.length) {
    throw new Error(`pixel buffers differ in size: ${a.length} vs ${b.length}`);
  }
  const out = new Uint8ClampedArray(a.length);
  for (let i = 0; i < a.length; i += 4) {
    const d =
      (Math.abs(a[i] - b[i]) + Math.abs(a[i + 1] - b[i + 1]) + Math.abs(a[i + 2] - b[i + 2])) / 3;
    const v = Math.min(255, Math.round(d * gain));
    out[i] = v;
    out[i + 1] = v;
    out[i + 2] = v;
    out[i + 3] = 255;
  }
  return out;
}

/** Mean absolute per-channel difference, for sanity checks and captions. */
export function meanAbsDiff(a: Uint8ClampedArray, b: Uint8ClampedArray): number {
  if (a.length !== b.length) {
    throw new Error(`pixel buffers differ in size: ${a.length} vs ${b.length}`);
  }
  let total = 0;
  let count = 0;
  for (let i = 0; i < a.length; i += 4) {
    total +=
      Math.abs(a[i] - b[i]) + Math.abs(a[i + 1] - b[i + 1]) + Math.abs(a[i + 2] - b[i + 2]);
    count += 3;
  }
  return count ? total / count : 0;
}
