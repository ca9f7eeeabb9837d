/**
 * Combined layer: merge the stride-8 tap with the upsampled stride-16 tap
 * into a compact descriptor written as layer 6 at the stride-8 resolution.
 *
 * The deeper tap is nearest-neighbor upsampled to the finer grid, the two
 * are concatenated channel-wise, and a fixed seeded orthogonal projection
 * reduces the result to the configured channel count. The projection is
 * weight-free metadata: deterministic for a given preset name.
 */

import { Plane } from "./encoder";
import { Prng, hashSeed } from "./prng";

export function upsampleNearest(plane: Plane, height: number, width: number): Plane {
  const data = new Float64Array(height * width * plane.channels);
  for (let row = 0; row < height; row++) {
    const srcRow = Math.min(plane.height - 1, Math.floor((row * plane.height) / height));
    for (let col = 0; col < width; col++) {
      const srcCol = Math.min(plane.width - 1, Math.floor((col * plane.width) / width));
      for (let c = 0; c < plane.channels; c++) {
        data[(row * width + col) * plane.channels + c] =
          plane.data[(srcRow * plane.width + srcCol) * plane.channels + c];
      }
    }
  }
  return { height, width, channels: plane.channels, data };
}

/** Rows of a random orthonormal basis via Gram-Schmidt over seeded normals. */
export function orthogonalProjection(rows: number, columns: number, seedName: string): Float64Array[] {
  if (rows > columns) throw new Error("projection cannot have more rows than columns");
  const rng = new Prng(hashSeed(seedName, "projection", rows, columns));
  const basis: Float64Array[] = [];
  while (basis.length < rows) {
    const candidate = new Float64Array(columns);
    for (let i = 0; i < columns; i++) candidate[i] = rng.normal();
    for (const row of basis) {
      let dot = 0;
      for (let i = 0; i < columns; i++) dot += candidate[i] * row[i];
      for (let i = 0; i < columns; i++) candidate[i] -= dot * row[i];
    }
    let norm = 0;
    for (let i = 0; i < columns; i++) norm += candidate[i] * candidate[i];
    norm = Math.sqrt(norm);
    if (norm < 1e-9) continue; // rejected: numerically dependent draw
    for (let i = 0; i < columns; i++) candidate[i] /= norm;
    basis.push(candidate);
  }
  return basis;
}

export function combineLayers(
  fine: Plane,
  coarse: Plane,
  outChannels: number,
  seedName: string,
): Plane {
  if (Math.ceil(fine.height / 2) !== coarse.height || Math.ceil(fine.width / 2) !== coarse.width) {
    throw new Error(
      `coarse grid ${coarse.height}x${coarse.width} is not the half resolution of ` +
        `${fine.height}x${fine.width}`,
    );
  }
  const upsampled = upsampleNearest(coarse, fine.height, fine.width);
  const stacked = fine.channels + upsampled.channels;
  const projection = orthogonalProjection(outChannels, stacked, seedName);
  const data = new Float64Array(fine.height * fine.width * outChannels);
  const pixelCount = fine.height * fine.width;
  const combined = new Float64Array(stacked);
  for (let pixel = 0; pixel < pixelCount; pixel++) {
    for (let c = 0; c < fine.channels; c++) combined[c] = fine.data[pixel * fine.channels + c];
    for (let c = 0; c < upsampled.channels; c++) {
      combined[fine.channels + c] = upsampled.data[pixel * upsampled.channels + c];
    }
    for (let oc = 0; oc < outChannels; oc++) {
      const row = projection[oc];
      let acc = 0;
      for (let c = 0; c < stacked; c++) acc += row[c] * combined[c];
      data[pixel * outChannels + oc] = acc;
    }
  }
  return { height: fine.height, width: fine.width, channels: outChannels, data };
}
