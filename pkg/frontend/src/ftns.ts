/**
 * Writers for the toolkit's binary artifact formats.
 *
 * FTNS: magic "FTNS", format version u32 (=1), layer_id u32, h u32, w u32,
 * f u32, downsample_factor u32, image_id length u32 + UTF-8 bytes, then
 * h*w*f little-endian float32 in row-major (row, column, channel) order.
 *
 * MSK1: magic "MSK1", H u32, W u32, then H*W bytes (1 background,
 * 0 foreground).
 */

import * as fs from "fs";

export const FTNS_VERSION = 1;

export interface FeatureGrid {
  layerId: number;
  downsample: number;
  imageId: string;
  gridH: number;
  gridW: number;
  channels: number;
  /** Row-major (row, column, channel). */
  values: Float32Array;
}

export function encodeFeatureGrid(grid: FeatureGrid): Buffer {
  const expected = grid.gridH * grid.gridW * grid.channels;
  if (grid.values.length !== expected) {
    throw new Error(
      `feature grid has ${grid.values.length} values, expected ${expected}`,
    );
  }
  for (const value of grid.values) {
    if (!Number.isFinite(value)) throw new Error("non-finite feature value");
  }
  const imageId = Buffer.from(grid.imageId, "utf-8");
  const header = Buffer.alloc(32 + imageId.length);
  header.write("FTNS", 0, "ascii");
  header.writeUInt32LE(FTNS_VERSION, 4);
  header.writeUInt32LE(grid.layerId, 8);
  header.writeUInt32LE(grid.gridH, 12);
  header.writeUInt32LE(grid.gridW, 16);
  header.writeUInt32LE(grid.channels, 20);
  header.writeUInt32LE(grid.downsample, 24);
  header.writeUInt32LE(imageId.length, 28);
  imageId.copy(header, 32);
  const payload = Buffer.alloc(4 * grid.values.length);
  for (let i = 0; i < grid.values.length; i++) {
    payload.writeFloatLE(grid.values[i], 4 * i);
  }
  return Buffer.concat([header, payload]);
}

export function writeFeatureGrid(path: string, grid: FeatureGrid): void {
  fs.writeFileSync(path, encodeFeatureGrid(grid));
}

export function encodeMask(values: Uint8Array, height: number, width: number): Buffer {
  if (values.length !== height * width) {
    throw new Error(`mask has ${values.length} bytes, expected ${height * width}`);
  }
  const header = Buffer.alloc(12);
  header.write("MSK1", 0, "ascii");
  header.writeUInt32LE(height, 4);
  header.writeUInt32LE(width, 8);
  return Buffer.concat([header, Buffer.from(values)]);
}

export function writeMask(path: string, values: Uint8Array, height: number, width: number): void {
  fs.writeFileSync(path, encodeMask(values, height, width));
}
