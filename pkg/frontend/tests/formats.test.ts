import { strict as assert } from "node:assert";
import { test } from "node:test";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { encodeFeatureGrid, encodeMask } from "../src/ftns";
import { readPgm, readPpm, writePgm, writePpm } from "../src/image";
import { Prng } from "../src/prng";

function tempDir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), "extractor-"));
}

test("feature grid header layout is byte exact", () => {
  const grid = {
    layerId: 3,
    downsample: 2,
    imageId: "img000",
    gridH: 1,
    gridW: 1,
    channels: 2,
    values: Float32Array.from([0.5, -1.0]),
  };
  const encoded = encodeFeatureGrid(grid);
  assert.equal(encoded.length, 38 + 8);
  assert.equal(encoded.subarray(0, 4).toString("ascii"), "FTNS");
  assert.equal(encoded.readUInt32LE(4), 1); // format version
  assert.equal(encoded.readUInt32LE(8), 3);
  assert.equal(encoded.readUInt32LE(12), 1);
  assert.equal(encoded.readUInt32LE(16), 1);
  assert.equal(encoded.readUInt32LE(20), 2);
  assert.equal(encoded.readUInt32LE(24), 2);
  assert.equal(encoded.readUInt32LE(28), 6);
  assert.equal(encoded.subarray(32, 38).toString("utf-8"), "img000");
  assert.equal(encoded.readFloatLE(38), 0.5);
  assert.equal(encoded.readFloatLE(42), -1.0);
});

test("non-finite feature values are rejected", () => {
  const grid = {
    layerId: 3, downsample: 2, imageId: "x", gridH: 1, gridW: 1, channels: 1,
    values: Float32Array.from([Number.NaN]),
  };
  assert.throws(() => encodeFeatureGrid(grid), /non-finite/);
});

test("mask layout matches the MSK1 contract", () => {
  const encoded = encodeMask(Uint8Array.from([1, 0, 1, 1, 0, 1]), 2, 3);
  assert.equal(encoded.subarray(0, 4).toString("ascii"), "MSK1");
  assert.equal(encoded.readUInt32LE(4), 2);
  assert.equal(encoded.readUInt32LE(8), 3);
  assert.deepEqual([...encoded.subarray(12)], [1, 0, 1, 1, 0, 1]);
});

test("ppm round trip", () => {
  const dir = tempDir();
  const rng = new Prng(1);
  const data = new Float64Array(5 * 4 * 3);
  for (let i = 0; i < data.length; i++) data[i] = Math.floor(rng.next() * 256);
  const image = { width: 4, height: 5, channels: 3, data, maxValue: 255 };
  const file = path.join(dir, "img.ppm");
  writePpm(file, image);
  const back = readPpm(file);
  assert.equal(back.width, 4);
  assert.equal(back.height, 5);
  assert.deepEqual([...back.data], [...data]);
});

test("pgm round trip including 16-bit label values", () => {
  const dir = tempDir();
  const data = Float64Array.from([0, 255, 893, 65535]);
  const image = { width: 2, height: 2, channels: 1, data, maxValue: 65535 };
  const file = path.join(dir, "labels.pgm");
  writePgm(file, image);
  const back = readPgm(file);
  assert.deepEqual([...back.data], [0, 255, 893, 65535]);
});

test("bad magic is rejected", () => {
  const dir = tempDir();
  const file = path.join(dir, "bad.ppm");
  fs.writeFileSync(file, Buffer.from("P3\n1 1\n255\n0 0 0\n", "ascii"));
  assert.throws(() => readPpm(file), /expected P6/);
});
