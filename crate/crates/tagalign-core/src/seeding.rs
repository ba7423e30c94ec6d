//! Deterministic seed derivation so every stochastic component gets its own
//! reproducible stream from one root seed.

/// splitmix64 finalizer; decorrelates nearby seeds.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// FNV-1a over a string; stable across platforms and runs.
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Mix an arbitrary list of parts into one child seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut acc: u64 = 0x243F6A8885A308D3;
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}
