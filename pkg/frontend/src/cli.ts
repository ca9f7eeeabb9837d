#!/usr/bin/env node
/**
 * CLI: `extract` runs the fixed encoder over a directory of images and
 * writes per-layer FTNS files; `make-masks` converts label maps into MSK1
 * background masks through a name table and a background-name mapping.
 */

import * as fs from "fs";
import * as path from "path";

import { presetByName } from "./encoder";
import { extractToFiles } from "./extract";
import { writeMask } from "./ftns";
import { readPgm } from "./image";
import { DEFAULT_BACKGROUND_NAMES, loadMappingFile, loadNameTable, makeMask } from "./masks";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    if (!argv[i].startsWith("--")) throw new Error(`unexpected argument ${argv[i]}`);
    const key = argv[i].slice(2);
    const value = argv[i + 1];
    if (value === undefined || value.startsWith("--")) {
      throw new Error(`flag --${key} needs a value`);
    }
    flags.set(key, value);
    i++;
  }
  return flags;
}

function requireFlag(flags: Map<string, string>, name: string): string {
  const value = flags.get(name);
  if (!value) throw new Error(`missing required flag --${name}`);
  return value;
}

function listInputs(dir: string, extensions: string[]): string[] {
  if (!fs.existsSync(dir)) throw new Error(`input directory ${dir} does not exist`);
  return fs
    .readdirSync(dir)
    .filter((name) => extensions.some((ext) => name.endsWith(ext)))
    .sort()
    .map((name) => path.join(dir, name));
}

function cmdExtract(argv: string[]): void {
  const flags = parseFlags(argv);
  const imagesDir = requireFlag(flags, "images");
  const outDir = requireFlag(flags, "out");
  const spec = presetByName(flags.get("weights") ?? "desk16");
  const layers = (flags.get("layers") ?? "3,4,5,6").split(",").map((v) => Number(v.trim()));
  const maxSide = flags.get("max-side");
  const effective = maxSide ? { ...spec, maxSide: Number(maxSide) } : spec;

  fs.mkdirSync(outDir, { recursive: true });
  const inputs = listInputs(imagesDir, [".ppm", ".pgm"]);
  if (inputs.length === 0) throw new Error(`no .ppm/.pgm images in ${imagesDir}`);
  for (const imagePath of inputs) {
    const written = extractToFiles(imagePath, outDir, effective, layers);
    console.log(`${imagePath}: ${written.length} layer files`);
  }
}

function cmdMakeMasks(argv: string[]): void {
  const flags = parseFlags(argv);
  const labelsDir = requireFlag(flags, "labels");
  const mappingPath = flags.get("mapping");
  const outDir = requireFlag(flags, "out");
  const namesPath = requireFlag(flags, "names");

  const mapping = mappingPath
    ? loadMappingFile(mappingPath)
    : { backgroundNames: new Set(DEFAULT_BACKGROUND_NAMES) };
  const nameTable = loadNameTable(namesPath);
  fs.mkdirSync(outDir, { recursive: true });
  const inputs = listInputs(labelsDir, [".pgm"]);
  if (inputs.length === 0) throw new Error(`no .pgm label maps in ${labelsDir}`);
  for (const labelPath of inputs) {
    const labels = readPgm(labelPath);
    const mask = makeMask(labels, nameTable, mapping);
    const imageId = path.basename(labelPath).replace(/\.pgm$/, "");
    writeMask(path.join(outDir, `${imageId}.msk`), mask, labels.height, labels.width);
    console.log(`${labelPath}: mask written`);
  }
}

function main(): number {
  const [command, ...rest] = process.argv.slice(2);
  try {
    if (command === "extract") cmdExtract(rest);
    else if (command === "make-masks") cmdMakeMasks(rest);
    else {
      console.error("usage: flowseg-extract <extract|make-masks> [flags]");
      return 2;
    }
  } catch (error) {
    console.error(`error: ${(error as Error).message}`);
    return 1;
  }
  return 0;
}

process.exitCode = main();
