/**
 * Minimal image decoding: binary PPM (P6, 8-bit RGB) for photos and binary
 * PGM (P5, 8- or 16-bit grayscale) for label maps. Both formats are
 * dependency-free and byte-deterministic; anything else can be converted
 * with standard tooling beforehand.
 */

import * as fs from "fs";

export interface RasterImage {
  width: number;
  height: number;
  channels: number;
  /** Row-major (row, column, channel); raw sample values. */
  data: Float64Array;
  /** Largest representable sample value (255 or 65535). */
  maxValue: number;
}

function parseHeader(buffer: Buffer, magic: string): { fields: number[]; offset: number } {
  if (buffer.length < 2 || buffer.toString("ascii", 0, 2) !== magic) {
    throw new Error(`expected ${magic} magic, got ${buffer.subarray(0, 2).toString("ascii")}`);
  }
  const fields: number[] = [];
  let offset = 2;
  while (fields.length < 3) {
    // Skip whitespace and comment lines between header tokens.
    while (offset < buffer.length && /\s/.test(String.fromCharCode(buffer[offset]))) offset++;
    if (buffer[offset] === 0x23) {
      while (offset < buffer.length && buffer[offset] !== 0x0a) offset++;
      continue;
    }
    let token = "";
    while (offset < buffer.length && !/\s/.test(String.fromCharCode(buffer[offset]))) {
      token += String.fromCharCode(buffer[offset]);
      offset++;
    }
    if (!/^\d+$/.test(token)) {
      throw new Error(`malformed ${magic} header token ${JSON.stringify(token)}`);
    }
    fields.push(Number(token));
  }
  offset++; // single whitespace after maxval
  return { fields, offset };
}

export function readPpm(path: string): RasterImage {
  const buffer = fs.readFileSync(path);
  const { fields, offset } = parseHeader(buffer, "P6");
  const [width, height, maxValue] = fields;
  if (maxValue !== 255) throw new Error(`${path}: only 8-bit PPM supported, maxval ${maxValue}`);
  const expected = width * height * 3;
  if (buffer.length - offset < expected) {
    throw new Error(`${path}: truncated pixel payload`);
  }
  const data = new Float64Array(expected);
  for (let i = 0; i < expected; i++) data[i] = buffer[offset + i];
  return { width, height, channels: 3, data, maxValue };
}

export function readPgm(path: string): RasterImage {
  const buffer = fs.readFileSync(path);
  const { fields, offset } = parseHeader(buffer, "P5");
  const [width, height, maxValue] = fields;
  const wide = maxValue > 255;
  const expected = width * height * (wide ? 2 : 1);
  if (buffer.length - offset < expected) {
    throw new Error(`${path}: truncated pixel payload`);
  }
  const data = new Float64Array(width * height);
  for (let i = 0; i < width * height; i++) {
    data[i] = wide ? buffer.readUInt16BE(offset + 2 * i) : buffer[offset + i];
  }
  return { width, height, channels: 1, data, maxValue };
}

export function readImage(path: string): RasterImage {
  if (path.endsWith(".ppm")) return readPpm(path);
  if (path.endsWith(".pgm")) return readPgm(path);
  throw new Error(`${path}: unsupported image format (expected .ppm or .pgm)`);
}

/** Nearest-neighbor resize used by the optional max-side cap. */
export function resizeNearest(image: RasterImage, height: number, width: number): RasterImage {
  const data = new Float64Array(height * width * image.channels);
  for (let row = 0; row < height; row++) {
    const srcRow = Math.min(image.height - 1, Math.floor((row * image.height) / height));
    for (let col = 0; col < width; col++) {
      const srcCol = Math.min(image.width - 1, Math.floor((col * image.width) / width));
      for (let c = 0; c < image.channels; c++) {
        data[(row * width + col) * image.channels + c] =
          image.data[(srcRow * image.width + srcCol) * image.channels + c];
      }
    }
  }
  return { width, height, channels: image.channels, data, maxValue: image.maxValue };
}

export function writePpm(path: string, image: RasterImage): void {
  const header = Buffer.from(`P6\n${image.width} ${image.height}\n255\n`, "ascii");
  const pixels = Buffer.alloc(image.width * image.height * 3);
  for (let i = 0; i < pixels.length; i++) pixels[i] = image.data[i];
  fs.writeFileSync(path, Buffer.concat([header, pixels]));
}

export function writePgm(path: string, image: RasterImage): void {
  const wide = image.maxValue > 255;
  const header = Buffer.from(
    `P5\n${image.width} ${image.height}\n${image.maxValue}\n`,
    "ascii",
  );
  const pixels = Buffer.alloc(image.width * image.height * (wide ? 2 : 1));
  for (let i = 0; i < image.width * image.height; i++) {
    if (wide) pixels.writeUInt16BE(image.data[i], 2 * i);
    else pixels[i] = image.data[i];
  }
  fs.writeFileSync(path, Buffer.concat([header, pixels]));
}
