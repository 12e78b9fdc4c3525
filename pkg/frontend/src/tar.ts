/**
 * Reader for the flat pax/ustar archives the gateway streams.
 *
 * Handles plain ustar headers plus pax extended headers ('x' records, which
 * override the following file's name/size) and the ustar name prefix field.
 * Sample archives are extracted with this in the browser; full downloads are
 * saved as archive files without extraction.
 */

export interface TarEntry {
  name: string;
  data: Uint8Array;
}

const BLOCK = 512;

function ascii(bytes: Uint8Array): string {
  let end = bytes.length;
  while (end > 0 && bytes[end - 1] === 0) end--;
  return new TextDecoder("utf-8").decode(bytes.subarray(0, end));
}

function octal(bytes: Uint8Array): number {
  const text = ascii(bytes).trim().replace(/\0+$/, "");
  if (text === "") return 0;
  return parseInt(text, 8);
}

function isZeroBlock(view: Uint8Array, offset: number): boolean {
  for (let i = 0; i < BLOCK; i++) {
    if (view[offset + i] !== 0) return false;
  }
  return true;
}

function parsePaxRecords(data: Uint8Array): Map<string, string> {
  // Each record: "<decimal length> <key>=<value>\n", length covers the record.
  const records = new Map<string, string>();
  const text = new TextDecoder("utf-8").decode(data);
  let pos = 0;
  while (pos < text.length) {
    const space = text.indexOf(" ", pos);
    if (space < 0) break;
    const length = parseInt(text.slice(pos, space), 10);
    if (!Number.isFinite(length) || length <= 0) break;
    const record = text.slice(pos, pos + length);
    const eq = record.indexOf("=");
    if (eq > 0) {
      records.set(record.slice(space - pos + 1, eq), record.slice(eq + 1).replace(/\n$/, ""));
    }
    pos += length;
  }
  return records;
}

export class TarFormatError extends Error {}

export function parseTar(buffer: ArrayBuffer | Uint8Array): TarEntry[] {
  const view = buffer instanceof Uint8Array ? buffer : new Uint8Array(buffer);
  if (view.length % BLOCK !== 0) {
    throw new TarFormatError(`archive length ${view.length} is not block-aligned`);
  }
  const entries: TarEntry[] = [];
  let offset = 0;
  let paxOverrides: Map<string, string> | null = null;

  while (offset + BLOCK <= view.length) {
    if (isZeroBlock(view, offset)) break; // end-of-archive marker

    const header = view.subarray(offset, offset + BLOCK);
    const magic = ascii(header.subarray(257, 262));
    if (magic !== "ustar") {
      throw new TarFormatError(`bad header magic at offset ${offset}`);
    }
    let name = ascii(header.subarray(0, 100));
    const prefix = ascii(header.subarray(345, 500));
    if (prefix) name = `${prefix}/${name}`;
    let size = octal(header.subarray(124, 136));
    const typeflag = String.fromCharCode(header[156] ?? 0);
    const dataStart = offset + BLOCK;
    const dataEnd = dataStart + size;
    const padded = Math.ceil(size / BLOCK) * BLOCK;

    if (typeflag === "x") {
      paxOverrides = parsePaxRecords(view.subarray(dataStart, dataEnd));
    } else if (typeflag === "g") {
      // global pax header: nothing we need
    } else if (typeflag === "0" || typeflag === "\0") {
      if (paxOverrides) {
        const paxName = paxOverrides.get("path");
        const paxSize = paxOverrides.get("size");
        if (paxName !== undefined) name = paxName;
        if (paxSize !== undefined) {
          size = parseInt(paxSize, 10);
        }
        paxOverrides = null;
      }
      entries.push({ name, data: view.slice(dataStart, dataStart + size) });
    } else {
      throw new TarFormatError(`unsupported member type ${JSON.stringify(typeflag)} for ${name}`);
    }
    offset = dataStart + padded;
  }
  return entries;
}

/** Group sample-archive entries into (image, sidecar) pairs keyed by stem. */
export function pairSampleEntries(entries: TarEntry[]): Map<string, { image?: TarEntry; sidecar?: TarEntry }> {
  const pairs = new Map<string, { image?: TarEntry; sidecar?: TarEntry }>();
  for (const entry of entries) {
    const dot = entry.name.lastIndexOf(".");
    const stem = dot > 0 ? entry.name.slice(0, dot) : entry.name;
    const slot = pairs.get(stem) ?? {};
    if (entry.name.endsWith(".png")) {
      slot.image = entry;
    } else if (entry.name.endsWith(".json")) {
      slot.sidecar = entry;
    }
    pairs.set(stem, slot);
  }
  return pairs;
}
