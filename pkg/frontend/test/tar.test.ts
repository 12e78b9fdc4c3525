import { readFile } from "node:fs/promises";
import { describe, expect, it } from "vitest";

import { pairSampleEntries, parseTar, TarFormatError } from "../src/tar.js";

const FIXTURE = new URL("./fixtures/sample.tar", import.meta.url);

describe("parseTar", () => {
  it("reads the server's pax archives, including long names", async () => {
    const data = new Uint8Array(await readFile(FIXTURE));
    const entries = parseTar(data);
    const names = entries.map((e) => e.name);
    expect(names).toHaveLength(4);
    expect(names[0]).toBe("orig-00001.png");
    expect(names[2]).toBe("crop-" + "x".repeat(120) + ".png");

    const png = entries[0]!;
    expect(Array.from(png.data.subarray(0, 4))).toEqual([0x89, 0x50, 0x4e, 0x47]);

    const sidecar = JSON.parse(new TextDecoder().decode(entries[1]!.data));
    expect(sidecar.label).toBe("Soybean");
    expect(entries[2]!.data).toHaveLength(777);
    expect(entries[3]!.data).toHaveLength(0);
  });

  it("rejects garbage", () => {
    expect(() => parseTar(new Uint8Array(1024).fill(7))).toThrow(TarFormatError);
    expect(() => parseTar(new Uint8Array(100))).toThrow(TarFormatError);
  });

  it("accepts an empty archive (just end-of-archive blocks)", () => {
    expect(parseTar(new Uint8Array(10240))).toEqual([]);
  });
});

describe("pairSampleEntries", () => {
  it("groups image and sidecar by stem", async () => {
    const entries = parseTar(new Uint8Array(await readFile(FIXTURE)));
    const pairs = pairSampleEntries(entries);
    const pair = pairs.get("orig-00001");
    expect(pair?.image?.name).toBe("orig-00001.png");
    expect(pair?.sidecar?.name).toBe("orig-00001.json");
  });
});
