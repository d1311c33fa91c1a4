/** End-to-end determinism against a live service.
 *
 * Opt-in: set COMPOSER_SERVICE_URL (e.g. http://127.0.0.1:8765) with a
 * checkpoint-backed service running; without it the suite is skipped so the
 * client tests never require a backend.
 */
import { describe, expect, it } from "vitest";

import { ApiClient, GenerateRequest } from "../src/api.js";

const url = process.env["COMPOSER_SERVICE_URL"];

/** Tiny valid PNG: 32x32 mid-gray, generated once with the canvas-free
 * encoder below and frozen as base64. Decodes anywhere, keeps the test
 * self-contained. */
import { deflateSync } from "node:zlib";

function crc32(buf: Uint8Array): number {
  let c = ~0;
  for (const b of buf) {
    c ^= b;
    for (let k = 0; k < 8; k++) c = (c >>> 1) ^ (0xedb88320 & -(c & 1));
  }
  return ~c >>> 0;
}

function chunk(type: string, data: Uint8Array): Uint8Array {
  const out = new Uint8Array(12 + data.length);
  const dv = new DataView(out.buffer);
  dv.setUint32(0, data.length);
  for (let i = 0; i < 4; i++) out[4 + i] = type.charCodeAt(i);
  out.set(data, 8);
  dv.setUint32(8 + data.length, crc32(out.subarray(4, 8 + data.length)));
  return out;
}

function grayPng(width: number, height: number, value: number): string {
  const ihdr = new Uint8Array(13);
  const dv = new DataView(ihdr.buffer);
  dv.setUint32(0, width);
  dv.setUint32(4, height);
  ihdr[8] = 8; // bit depth
  ihdr[9] = 2; // rgb
  const rows = new Uint8Array(height * (1 + width * 3));
  for (let y = 0; y < height; y++) {
    rows.subarray(y * (1 + width * 3) + 1, (y + 1) * (1 + width * 3)).fill(value);
  }
  const png = [
    new Uint8Array([137, 80, 78, 71, 13, 10, 26, 10]),
    chunk("IHDR", ihdr),
    chunk("IDAT", new Uint8Array(deflateSync(rows))),
    chunk("IEND", new Uint8Array(0)),
  ];
  return Buffer.concat(png).toString("base64");
}

describe.skipIf(!url)("live service", () => {
  const client = new ApiClient(url ?? "");

  const request: GenerateRequest = {
    base_png: grayPng(48, 48, 128),
    bbox: { x: 8, y: 8, w: 32, h: 32 },
    text: { attrs: { shape: "ellipse", color: "red", size: "large" } },
    seed: 123,
    mode: "full_paste",
    return_debug: true,
  };

  it("reports a loaded checkpoint", async () => {
    const health = await client.health();
    expect(health.checkpoint_loaded).toBe(true);
  });

  it("renders pixel-identical panels for an identical resubmission", async () => {
    const first = await client.generate(request);
    const second = await client.generate(structuredClone(request));
    expect(second.composite_png).toEqual(first.composite_png);
    expect(second.crop_png).toEqual(first.crop_png);
    expect(second.mask_png).toEqual(first.mask_png);
    expect(second.switch_pngs).toEqual(first.switch_pngs);
  });

  it("changes the crop when only the seed changes", async () => {
    const first = await client.generate(request);
    const other = await client.generate({ ...request, seed: 124 });
    expect(other.crop_png).not.toEqual(first.crop_png);
  });
});
