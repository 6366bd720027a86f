/** Sequential colormap over the fixed display range [0, 5].
 *
 * The range is pinned to the source-amplitude ceiling so that frames are
 * comparable across time and across environment edits; the map never
 * rescales to the data. Values outside the range clamp to the ends.
 */

export const FIELD_MIN = 0;
export const FIELD_MAX = 5;

// Anchor colors of a dark-to-bright perceptual ramp, evenly spaced in t.
const STOPS: ReadonlyArray<readonly [number, number, number]> = [
  [68, 1, 84],
  [71, 44, 122],
  [59, 81, 139],
  [44, 113, 142],
  [33, 144, 141],
  [39, 173, 129],
  [92, 200, 99],
  [170, 220, 50],
  [253, 231, 37],
];

/** Map a field value to an rgb() string, clamping to [FIELD_MIN, FIELD_MAX]. */
export function colorFor(value: number): string {
  let t = (value - FIELD_MIN) / (FIELD_MAX - FIELD_MIN);
  if (Number.isNaN(t)) t = 0;
  t = Math.min(1, Math.max(0, t));
  const scaled = t * (STOPS.length - 1);
  const i = Math.min(STOPS.length - 2, Math.floor(scaled));
  const f = scaled - i;
  const a = STOPS[i]!;
  const b = STOPS[i + 1]!;
  const r = Math.round(a[0] + f * (b[0] - a[0]));
  const g = Math.round(a[1] + f * (b[1] - a[1]));
  const bl = Math.round(a[2] + f * (b[2] - a[2]));
  return `rgb(${r},${g},${bl})`;
}
