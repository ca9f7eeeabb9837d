import { strict as assert } from "node:assert";
import { test } from "node:test";

import { RasterImage } from "../src/image";
import { LabelMapping, makeMask } from "../src/masks";
import { Prng } from "../src/prng";

const NAME_TABLE = new Map<number, string>([
  [1, "wall"],
  [2, "floor"],
  [3, "ceiling"],
  [4, "window"],
  [5, "chair"],
  [6, "table"],
]);

const MAPPING: LabelMapping = {
  backgroundNames: new Set(["ceiling", "floor", "wall", "window"]),
};

function labelImage(values: number[], height: number, width: number): RasterImage {
  return { height, width, channels: 1, data: Float64Array.from(values), maxValue: 255 };
}

test("all-wall image maps to an all-background mask", () => {
  const labels = labelImage(new Array(12).fill(1), 3, 4);
  const mask = makeMask(labels, NAME_TABLE, MAPPING);
  assert.ok([...mask].every((v) => v === 1));
});

test("non-background labels become foreground", () => {
  const labels = labelImage([5, 1, 6, 2], 2, 2);
  const mask = makeMask(labels, NAME_TABLE, MAPPING);
  assert.deepEqual([...mask], [0, 1, 0, 1]);
});

test("background fraction matches a hand count on a mixed image", () => {
  const rng = new Prng(3);
  const ids = [1, 2, 3, 4, 5, 6];
  const values: number[] = [];
  for (let i = 0; i < 400; i++) values.push(ids[Math.floor(rng.next() * ids.length)]);
  const expected = values.filter((v) => v <= 4).length;
  const mask = makeMask(labelImage(values, 20, 20), NAME_TABLE, MAPPING);
  const actual = [...mask].reduce((a, b) => a + b, 0);
  assert.equal(actual, expected);
});

test("unknown label ids are an error, not silent foreground", () => {
  const labels = labelImage([1, 99], 1, 2);
  assert.throws(() => makeMask(labels, NAME_TABLE, MAPPING), /label id 99/);
});

test("multi-channel input is rejected", () => {
  const bad: RasterImage = {
    height: 1, width: 1, channels: 3, data: Float64Array.from([1, 1, 1]), maxValue: 255,
  };
  assert.throws(() => makeMask(bad, NAME_TABLE, MAPPING), /single channel/);
});
