// Minimal dependency-free PNG codec for 8-bit grayscale sketches.
//
// The encoder emits uncompressed (stored-block) zlib data, which every PNG
// reader accepts; the decoder only needs to read back what we wrote, so it
// supports exactly that layout. Round trips are pixel-identical.

const SIGNATURE = [137, 80, 78, 71, 13, 10, 26, 10];

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (const b of bytes) {
    c = CRC_TABLE[(c ^ b) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (const byte of bytes) {
    a = (a + byte) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function u32be(value: number): number[] {
  return [(value >>> 24) & 0xff, (value >>> 16) & 0xff, (value >>> 8) & 0xff, value & 0xff];
}

function chunk(type: string, data: Uint8Array): number[] {
  const typed = new Uint8Array(4 + data.length);
  for (let i = 0; i < 4; i++) typed[i] = type.charCodeAt(i);
  typed.set(data, 4);
  return [...u32be(data.length), ...typed, ...u32be(crc32(typed))];
}

function zlibStored(raw: Uint8Array): Uint8Array {
  const parts: number[] = [0x78, 0x01];
  for (let off = 0; off < raw.length || off === 0; off += 65535) {
    const len = Math.min(65535, raw.length - off);
    const final = off + len >= raw.length ? 1 : 0;
    parts.push(final, len & 0xff, len >> 8, ~len & 0xff, (~len >> 8) & 0xff);
    for (let i = 0; i < len; i++) parts.push(raw[off + i]);
    if (final) break;
  }
  parts.push(...u32be(adler32(raw)));
  return Uint8Array.from(parts);
}

function zlibStoredInflate(data: Uint8Array): Uint8Array {
  if ((data[0] & 0x0f) !== 8) throw new Error("not a zlib stream");
  let pos = 2;
  const out: number[] = [];
  for (;;) {
    const header = data[pos++];
    if ((header & 0x06) !== 0) throw new Error("compressed PNG data; this decoder reads only sketch exports");
    const len = data[pos] | (data[pos + 1] << 8);
    pos += 4; // LEN + NLEN
    for (let i = 0; i < len; i++) out.push(data[pos + i]);
    pos += len;
    if (header & 1) break;
  }
  return Uint8Array.from(out);
}

export interface GrayImage {
  width: number;
  height: number;
  pixels: Uint8Array; // row-major, 0..255
}

/** Encode an 8-bit grayscale image as a PNG (deterministic bytes). */
export function encodeGrayPng(img: GrayImage): Uint8Array {
  const { width, height, pixels } = img;
  if (pixels.length !== width * height) throw new Error("pixel buffer does not match dimensions");
  const ihdr = Uint8Array.from([...u32be(width), ...u32be(height), 8, 0, 0, 0, 0]);
  const raw = new Uint8Array((width + 1) * height);
  for (let y = 0; y < height; y++) {
    raw[y * (width + 1)] = 0; // filter: None
    raw.set(pixels.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
  }
  const bytes = [
    ...SIGNATURE,
    ...chunk("IHDR", ihdr),
    ...chunk("IDAT", zlibStored(raw)),
    ...chunk("IEND", new Uint8Array(0)),
  ];
  return Uint8Array.from(bytes);
}

/** Decode a PNG produced by encodeGrayPng. */
export function decodeGrayPng(bytes: Uint8Array): GrayImage {
  for (let i = 0; i < 8; i++) {
    if (bytes[i] !== SIGNATURE[i]) throw new Error("not a PNG");
  }
  let pos = 8;
  let width = 0;
  let height = 0;
  const idat: number[] = [];
  while (pos < bytes.length) {
    const len = (bytes[pos] << 24) | (bytes[pos + 1] << 16) | (bytes[pos + 2] << 8) | bytes[pos + 3];
    const type = String.fromCharCode(bytes[pos + 4], bytes[pos + 5], bytes[pos + 6], bytes[pos + 7]);
    const data = bytes.subarray(pos + 8, pos + 8 + len);
    if (type === "IHDR") {
      width = (data[0] << 24) | (data[1] << 16) | (data[2] << 8) | data[3];
      height = (data[4] << 24) | (data[5] << 16) | (data[6] << 8) | data[7];
      if (data[8] !== 8 || data[9] !== 0) throw new Error("only 8-bit grayscale sketch PNGs are supported");
    } else if (type === "IDAT") {
      idat.push(...data);
    } else if (type === "IEND") {
      break;
    }
    pos += 12 + len;
  }
  const raw = zlibStoredInflate(Uint8Array.from(idat));
  const pixels = new Uint8Array(width * height);
  for (let y = 0; y < height; y++) {
    if (raw[y * (width + 1)] !== 0) throw new Error("unexpected PNG row filter");
    pixels.set(raw.subarray(y * (width + 1) + 1, (y + 1) * (width + 1)), y * width);
  }
  return { width, height, pixels };
}
