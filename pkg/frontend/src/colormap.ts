/** Attention-weight colormap: blue (0.0) through cyan and yellow to red
 * (1.0). The stops mirror the renderer on the service side exactly;
 * keep both in sync. */

export type Rgb = [number, number, number];

export const COLORMAP_STOPS: Array<[number, Rgb]> = [
  [0.0, [0, 0, 255]],
  [1.0 / 3.0, [0, 255, 255]],
  [2.0 / 3.0, [255, 255, 0]],
  [1.0, [255, 0, 0]],
];

/** Round half to even, matching the service-side renderer's rounding. */
function roundHalfEven(x: number): number {
  const floor = Math.floor(x);
  const frac = x - floor;
  if (frac > 0.5) return floor + 1;
  if (frac < 0.5) return floor;
  return floor % 2 === 0 ? floor : floor + 1;
}

export function colormap(weight: number): Rgb {
  // interpolate on 3x-scaled stop positions (0, 1, 2, 3): the segment
  // boundaries are exact binary floats, matching the service renderer
  const w = Math.min(1, Math.max(0, weight)) * 3;
  let lo: [number, Rgb] = [COLORMAP_STOPS[0][0] * 3, COLORMAP_STOPS[0][1]];
  let hi = lo;
  for (let i = 0; i + 1 < COLORMAP_STOPS.length; i++) {
    const a: [number, Rgb] = [COLORMAP_STOPS[i][0] * 3, COLORMAP_STOPS[i][1]];
    const b: [number, Rgb] = [COLORMAP_STOPS[i + 1][0] * 3, COLORMAP_STOPS[i + 1][1]];
    if (w >= a[0] && w <= b[0]) {
      lo = a;
      hi = b;
      break;
    }
    lo = b;
    hi = b;
  }
  const span = hi[0] - lo[0];
  return [0, 1, 2].map((ch) => {
    const slope = span === 0 ? 0 : (hi[1][ch] - lo[1][ch]) / span;
    return roundHalfEven(slope * (w - lo[0]) + lo[1][ch]);
  }) as Rgb;
}

export function cssColor(weight: number): string {
  const [r, g, b] = colormap(weight);
  return `rgb(${r}, ${g}, ${b})`;
}
