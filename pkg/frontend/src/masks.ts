/**
 * Label-map ingestion: turn dense label ids into binary background masks.
 *
 * Background is whatever an empty room would contain; the default mapping
 * covers ceiling, floor, wall and window, and everything else is
 * foreground. Label ids are resolved through a name table, so unknown ids
 * fail loudly instead of silently becoming foreground.
 */

import * as fs from "fs";

import { RasterImage } from "./image";

export const DEFAULT_BACKGROUND_NAMES = ["ceiling", "floor", "wall", "window"];

export interface LabelMapping {
  backgroundNames: Set<string>;
}

export function loadMappingFile(path: string): LabelMapping {
  const names = fs
    .readFileSync(path, "utf-8")
    .split("\n")
    .map((line) => line.trim().toLowerCase())
    .filter((line) => line.length > 0 && !line.startsWith("#"));
  if (names.length === 0) {
    throw new Error(`${path}: mapping file lists no background label names`);
  }
  return { backgroundNames: new Set(names) };
}

/** Name table: JSON object of label id -> label name. */
export function loadNameTable(path: string): Map<number, string> {
  const raw = JSON.parse(fs.readFileSync(path, "utf-8"));
  const table = new Map<number, string>();
  for (const [key, value] of Object.entries(raw)) {
    if (typeof value !== "string") throw new Error(`${path}: label ${key} has a non-string name`);
    table.set(Number(key), value.toLowerCase());
  }
  if (table.size === 0) throw new Error(`${path}: empty name table`);
  return table;
}

export function makeMask(
  labels: RasterImage,
  nameTable: Map<number, string>,
  mapping: LabelMapping,
): Uint8Array {
  if (labels.channels !== 1) {
    throw new Error("label images must be single channel");
  }
  const out = new Uint8Array(labels.height * labels.width);
  for (let i = 0; i < out.length; i++) {
    const id = labels.data[i];
    const name = nameTable.get(id);
    if (name === undefined) {
      throw new Error(`label id ${id} is missing from the name table`);
    }
    out[i] = mapping.backgroundNames.has(name) ? 1 : 0;
  }
  return out;
}
