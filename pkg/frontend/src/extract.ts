/**
 * Extraction driver: image file in, one FTNS file per requested layer out.
 *
 * Layers 3-5 are direct encoder taps; layer 6 is the combined descriptor
 * (stride-8 tap merged with the upsampled stride-16 tap, projected to the
 * preset's channel count) written at the stride-8 resolution.
 */

import * as path from "path";

import { combineLayers } from "./combine";
import { EncoderSpec, Plane, encode } from "./encoder";
import { FeatureGrid, writeFeatureGrid } from "./ftns";
import { RasterImage, readImage, resizeNearest } from "./image";

export const COMBINED_LAYER_ID = 6;

export function toFeatureGrid(
  plane: Plane, layerId: number, downsample: number, imageId: string,
): FeatureGrid {
  return {
    layerId,
    downsample,
    imageId,
    gridH: plane.height,
    gridW: plane.width,
    channels: plane.channels,
    values: Float32Array.from(plane.data),
  };
}

function applyResizePolicy(image: RasterImage, spec: EncoderSpec): RasterImage {
  if (!spec.maxSide) return image;
  const longest = Math.max(image.height, image.width);
  if (longest <= spec.maxSide) return image;
  const scale = spec.maxSide / longest;
  return resizeNearest(
    image,
    Math.max(1, Math.round(image.height * scale)),
    Math.max(1, Math.round(image.width * scale)),
  );
}

export function extractGrids(
  image: RasterImage, spec: EncoderSpec, layers: number[], imageId: string,
): FeatureGrid[] {
  const sized = applyResizePolicy(image, spec);
  const tapped = encode(sized, spec);
  const byLayer = new Map(spec.taps.map((tap) => [tap.layerId, tap]));

  const grids: FeatureGrid[] = [];
  for (const layerId of layers) {
    if (layerId === COMBINED_LAYER_ID) {
      const fineTap = byLayer.get(4);
      const coarseTap = byLayer.get(5);
      if (!fineTap || !coarseTap) {
        throw new Error("layer 6 needs both the stride-8 and stride-16 taps in the preset");
      }
      const combined = combineLayers(
        tapped.get(4)!, tapped.get(5)!, spec.combinedChannels, spec.name,
      );
      grids.push(toFeatureGrid(combined, COMBINED_LAYER_ID, fineTap.downsample, imageId));
      continue;
    }
    const tap = byLayer.get(layerId);
    if (!tap) {
      throw new Error(`layer ${layerId} is not tapped by preset ${spec.name}`);
    }
    grids.push(toFeatureGrid(tapped.get(layerId)!, layerId, tap.downsample, imageId));
  }
  return grids;
}

export function extractToFiles(
  imagePath: string, outDir: string, spec: EncoderSpec, layers: number[],
): string[] {
  const imageId = path.basename(imagePath).replace(/\.(ppm|pgm)$/, "");
  const image = readImage(imagePath);
  const written: string[] = [];
  for (const grid of extractGrids(image, spec, layers, imageId)) {
    const target = path.join(outDir, `${imageId}_layer${grid.layerId}.ftns`);
    writeFeatureGrid(target, grid);
    written.push(target);
  }
  return written;
}
