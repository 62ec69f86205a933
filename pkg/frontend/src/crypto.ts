// Ed25519 login signing via WebCrypto. The wallet file written by
// `donorchain network up` stores raw 32-byte seeds as hex; WebCrypto only
// imports PKCS#8, so we wrap the seed in the fixed RFC 8410 prefix.

const ED25519_PKCS8_PREFIX = "302e020100300506032b657004220420";

export function hexToBytes(hex: string): Uint8Array {
  const clean = hex.trim().toLowerCase();
  if (clean.length % 2 !== 0 || /[^0-9a-f]/.test(clean)) {
    throw new Error(`not hex: ${hex.slice(0, 16)}...`);
  }
  const out = new Uint8Array(clean.length / 2);
  for (let i = 0; i < out.length; i++) {
    out[i] = parseInt(clean.slice(i * 2, i * 2 + 2), 16);
  }
  return out;
}

export function bytesToHex(bytes: Uint8Array): string {
  let out = "";
  for (const b of bytes) out += b.toString(16).padStart(2, "0");
  return out;
}

export async function importSigningSeed(seedHex: string): Promise<CryptoKey> {
  const seed = hexToBytes(seedHex);
  if (seed.length !== 32) throw new Error("ed25519 seed must be 32 bytes");
  const pkcs8 = hexToBytes(ED25519_PKCS8_PREFIX + bytesToHex(seed));
  return crypto.subtle.importKey("pkcs8", pkcs8.buffer as ArrayBuffer, { name: "Ed25519" }, false, [
    "sign",
  ]);
}

/** Sign a login nonce; the gateway expects hex over the UTF-8 nonce. */
export async function signNonce(key: CryptoKey, nonce: string): Promise<string> {
  const sig = await crypto.subtle.sign("Ed25519", key, new TextEncoder().encode(nonce));
  return bytesToHex(new Uint8Array(sig));
}
