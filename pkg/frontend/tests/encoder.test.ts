import { strict as assert } from "node:assert";
import { test } from "node:test";

import { combineLayers, orthogonalProjection, upsampleNearest } from "../src/combine";
import { Plane, encode, presetByName } from "../src/encoder";
import { extractGrids } from "../src/extract";
import { RasterImage } from "../src/image";
import { Prng } from "../src/prng";

function randomImage(height: number, width: number, seed = 7): RasterImage {
  const rng = new Prng(seed);
  const data = new Float64Array(height * width * 3);
  for (let i = 0; i < data.length; i++) data[i] = Math.floor(rng.next() * 256);
  return { height, width, channels: 3, data, maxValue: 255 };
}

function constantPlane(height: number, width: number, channels: number, value: number): Plane {
  return {
    height, width, channels,
    data: new Float64Array(height * width * channels).fill(value),
  };
}

test("tap grids obey ceiling division for strides 4, 8 and 16", () => {
  const spec = presetByName("desk16");
  for (const [height, width] of [[57, 41], [64, 64], [33, 47]] as const) {
    const tapped = encode(randomImage(height, width), spec);
    for (const tap of spec.taps) {
      const plane = tapped.get(tap.layerId)!;
      assert.equal(plane.height, Math.ceil(height / tap.downsample),
        `layer ${tap.layerId} height for ${height}x${width}`);
      assert.equal(plane.width, Math.ceil(width / tap.downsample));
      assert.equal(plane.channels, tap.channels);
    }
  }
});

test("224 and 225 pixel inputs give 28 and 29 cell grids at stride 8", () => {
  const spec = presetByName("desk16");
  const even = encode(randomImage(224, 224, 1), spec).get(4)!;
  assert.equal(even.height, 28);
  assert.equal(even.width, 28);
  const ragged = encode(randomImage(225, 225, 2), spec).get(4)!;
  assert.equal(ragged.height, 29);
  assert.equal(ragged.width, 29);
});

test("extraction is deterministic for fixed preset weights", () => {
  const spec = presetByName("desk16");
  const image = randomImage(48, 40);
  const first = extractGrids(image, spec, [3, 4, 5, 6], "img000");
  const second = extractGrids(image, spec, [3, 4, 5, 6], "img000");
  assert.equal(first.length, second.length);
  for (let i = 0; i < first.length; i++) {
    assert.deepEqual([...first[i].values], [...second[i].values], `layer ${first[i].layerId}`);
  }
});

test("combined layer has 128 channels at the stride-8 resolution", () => {
  const spec = presetByName("desk16");
  const grids = extractGrids(randomImage(64, 48), spec, [4, 5, 6], "img001");
  const byLayer = new Map(grids.map((g) => [g.layerId, g]));
  const layer4 = byLayer.get(4)!;
  const layer6 = byLayer.get(6)!;
  assert.equal(layer6.channels, 128);
  assert.equal(layer6.gridH, layer4.gridH);
  assert.equal(layer6.gridW, layer4.gridW);
  assert.equal(layer6.downsample, layer4.downsample);
});

test("combining constant planes yields a constant plane", () => {
  const fine = constantPlane(8, 8, 64, 0.25);
  const coarse = constantPlane(4, 4, 64, -0.5);
  const combined = combineLayers(fine, coarse, 128, "desk16");
  assert.equal(combined.channels, 128);
  const first = Array.from(combined.data.subarray(0, 128));
  for (let pixel = 1; pixel < 64; pixel++) {
    const slice = Array.from(combined.data.subarray(pixel * 128, (pixel + 1) * 128));
    assert.deepEqual(slice, first);
  }
});

test("resolution mismatch in combine is rejected", () => {
  assert.throws(
    () => combineLayers(constantPlane(8, 8, 4, 0), constantPlane(3, 3, 4, 0), 8, "x"),
    /half resolution/,
  );
});

test("projection rows are orthonormal", () => {
  const rows = orthogonalProjection(16, 48, "desk16");
  for (let i = 0; i < rows.length; i++) {
    for (let j = i; j < rows.length; j++) {
      let dot = 0;
      for (let c = 0; c < 48; c++) dot += rows[i][c] * rows[j][c];
      const expected = i === j ? 1 : 0;
      assert.ok(Math.abs(dot - expected) < 1e-12, `rows ${i},${j} dot ${dot}`);
    }
  }
});

test("nearest upsampling repeats cells", () => {
  const coarse: Plane = { height: 2, width: 2, channels: 1, data: Float64Array.from([1, 2, 3, 4]) };
  const up = upsampleNearest(coarse, 4, 4);
  assert.deepEqual([...up.data], [1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4]);
});

test("unknown preset fails loudly", () => {
  assert.throws(() => presetByName("production-v2"), /unknown weights preset/);
});
