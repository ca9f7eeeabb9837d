/**
 * Fixed-weight convolutional encoder.
 *
 * A stack of 3x3 same-padding convolutions with ReLU, each followed by
 * 2x2 max pooling in ceil mode, so after m pooling stages the grid is
 * ceil(H / 2^m) x ceil(W / 2^m). Weights are drawn once from a seeded
 * fan-in-scaled uniform scheme identified by the preset name: extraction
 * is inference only and bit-deterministic for a given preset.
 */

import { Prng, hashSeed } from "./prng";
import { RasterImage } from "./image";

export interface LayerTap {
  layerId: number;
  downsample: number;
  channels: number;
}

export interface EncoderSpec {
  name: string;
  seed: number;
  /** Channel width after each pooling stage, in order. */
  stageChannels: number[];
  /** Taps onto pooling-stage outputs: downsample = 2^stageIndex. */
  taps: LayerTap[];
  /** Channel count of the combined layer written as layer 6. */
  combinedChannels: number;
  /** Optional cap on max(H, W); larger inputs are resized first. */
  maxSide?: number;
}

/** Named weight presets; "desk16" taps stages at strides 4, 8 and 16. */
export const PRESETS: Record<string, EncoderSpec> = {
  desk16: {
    name: "desk16",
    seed: 0x5eed,
    stageChannels: [16, 32, 64, 64],
    taps: [
      { layerId: 3, downsample: 4, channels: 32 },
      { layerId: 4, downsample: 8, channels: 64 },
      { layerId: 5, downsample: 16, channels: 64 },
    ],
    combinedChannels: 128,
  },
};

export function presetByName(name: string): EncoderSpec {
  const spec = PRESETS[name];
  if (!spec) {
    throw new Error(`unknown weights preset ${JSON.stringify(name)}; known: ${Object.keys(PRESETS).join(", ")}`);
  }
  return spec;
}

export interface Plane {
  height: number;
  width: number;
  channels: number;
  /** Row-major (row, column, channel). */
  data: Float64Array;
}

function convolve3x3(input: Plane, weights: Float64Array, biases: Float64Array, outChannels: number): Plane {
  const { height, width, channels } = input;
  const out = new Float64Array(height * width * outChannels);
  for (let row = 0; row < height; row++) {
    for (let col = 0; col < width; col++) {
      for (let oc = 0; oc < outChannels; oc++) {
        let acc = biases[oc];
        for (let dr = -1; dr <= 1; dr++) {
          const r = row + dr;
          if (r < 0 || r >= height) continue;
          for (let dc = -1; dc <= 1; dc++) {
            const c = col + dc;
            if (c < 0 || c >= width) continue;
            const pixel = (r * width + c) * channels;
            const kernel = (((dr + 1) * 3 + (dc + 1)) * channels) * outChannels + oc;
            for (let ic = 0; ic < channels; ic++) {
              acc += input.data[pixel + ic] * weights[kernel + ic * outChannels];
            }
          }
        }
        out[(row * width + col) * outChannels + oc] = acc > 0 ? acc : 0;
      }
    }
  }
  return { height, width, channels: outChannels, data: out };
}

function maxPool2(input: Plane): Plane {
  const height = Math.ceil(input.height / 2);
  const width = Math.ceil(input.width / 2);
  const out = new Float64Array(height * width * input.channels);
  for (let row = 0; row < height; row++) {
    for (let col = 0; col < width; col++) {
      for (let c = 0; c < input.channels; c++) {
        let best = -Infinity;
        for (let dr = 0; dr < 2; dr++) {
          const r = row * 2 + dr;
          if (r >= input.height) continue;
          for (let dc = 0; dc < 2; dc++) {
            const cc = col * 2 + dc;
            if (cc >= input.width) continue;
            const value = input.data[(r * input.width + cc) * input.channels + c];
            if (value > best) best = value;
          }
        }
        out[(row * width + col) * input.channels + c] = best;
      }
    }
  }
  return { height, width, channels: input.channels, data: out };
}

function stageWeights(spec: EncoderSpec, stage: number, inChannels: number, outChannels: number) {
  const rng = new Prng(hashSeed(spec.name, spec.seed, "stage", stage));
  const limit = Math.sqrt(6 / (9 * inChannels));
  const weights = new Float64Array(9 * inChannels * outChannels);
  for (let i = 0; i < weights.length; i++) weights[i] = rng.uniform(limit);
  const biases = new Float64Array(outChannels);
  return { weights, biases };
}

function normalize(image: RasterImage): Plane {
  const data = new Float64Array(image.data.length);
  for (let i = 0; i < data.length; i++) data[i] = image.data[i] / image.maxValue - 0.5;
  return { height: image.height, width: image.width, channels: image.channels, data };
}

/** Run the encoder and return the tapped stage outputs keyed by layer id. */
export function encode(image: RasterImage, spec: EncoderSpec): Map<number, Plane> {
  validateTaps(spec);
  let plane = normalize(image);
  const byDownsample = new Map<number, LayerTap>();
  for (const tap of spec.taps) byDownsample.set(tap.downsample, tap);

  const outputs = new Map<number, Plane>();
  let stride = 1;
  for (let stage = 0; stage < spec.stageChannels.length; stage++) {
    const { weights, biases } = stageWeights(
      spec, stage, plane.channels, spec.stageChannels[stage],
    );
    plane = maxPool2(convolve3x3(plane, weights, biases, spec.stageChannels[stage]));
    stride *= 2;
    const tap = byDownsample.get(stride);
    if (tap) {
      if (tap.channels !== plane.channels) {
        throw new Error(
          `tap for layer ${tap.layerId} declares ${tap.channels} channels but stage emits ${plane.channels}`,
        );
      }
      outputs.set(tap.layerId, plane);
    }
  }
  for (const tap of spec.taps) {
    if (!outputs.has(tap.layerId)) {
      throw new Error(`tap at downsample ${tap.downsample} never reached; add pooling stages`);
    }
  }
  return outputs;
}

export function validateTaps(spec: EncoderSpec): void {
  let previous = 0;
  for (const tap of spec.taps) {
    if (tap.downsample <= previous) {
      throw new Error("taps must be strictly increasing in downsample factor");
    }
    previous = tap.downsample;
  }
}
