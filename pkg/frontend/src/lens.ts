// Zoom-lens geometry: integer nearest-neighbor magnification of the pixel
// neighborhood around a marker. No resampling: every lens cell maps to
// exactly one source pixel, and the center cell is the labeled pixel itself.

export interface LensSpec {
  row: number; // marker position in image coordinates
  col: number;
  radius: number; // neighborhood half-extent in pixels
  scale: number; // integer magnification per source pixel
}

export interface LensCell {
  srcRow: number;
  srcCol: number;
  dx: number; // destination rect inside the lens canvas
  dy: number;
  size: number;
  isCenter: boolean;
}

export function lensSize(spec: LensSpec): number {
  return (2 * spec.radius + 1) * spec.scale;
}

/** Map every lens cell to its source pixel (clipped cells are omitted). */
export function lensCells(
  spec: LensSpec,
  height: number,
  width: number
): LensCell[] {
  const cells: LensCell[] = [];
  for (let dr = -spec.radius; dr <= spec.radius; dr++) {
    for (let dc = -spec.radius; dc <= spec.radius; dc++) {
      const srcRow = spec.row + dr;
      const srcCol = spec.col + dc;
      if (srcRow < 0 || srcRow >= height || srcCol < 0 || srcCol >= width) {
        continue;
      }
      cells.push({
        srcRow,
        srcCol,
        dx: (dc + spec.radius) * spec.scale,
        dy: (dr + spec.radius) * spec.scale,
        size: spec.scale,
        isCenter: dr === 0 && dc === 0,
      });
    }
  }
  return cells;
}

/** Inverse mapping: which source pixel does a lens-canvas point show? */
export function lensPointToSource(
  spec: LensSpec,
  x: number,
  y: number
): [number, number] {
  const dr = Math.floor(y / spec.scale) - spec.radius;
  const dc = Math.floor(x / spec.scale) - spec.radius;
  return [spec.row + dr, spec.col + dc];
}
