//! Seeded, counter-based pseudo-random streams.
//!
//! Everything random in this crate flows through these generators so that
//! identical seeds reproduce identical bytes on every run and platform.
//! The stream is the splitmix64 output function applied to a keyed counter;
//! standard normals come from the Marsaglia polar transform, which consumes
//! counter values deterministically (rejection included) and touches only
//! `ln` and `sqrt`.

/// splitmix64 output function. Bijective 64-bit mixer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over `bytes`, keyed by `seed`. Used to derive a stream key from
/// (seed, text) pairs.
pub fn key_for(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ mix64(seed);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(h)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Counter-based u64 stream: value i is `mix64(key + i * GOLDEN)`.
#[derive(Debug, Clone)]
pub struct U64Stream {
    key: u64,
    counter: u64,
}

impl U64Stream {
    pub fn new(key: u64) -> Self {
        U64Stream { key, counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)));
        self.counter += 1;
        v
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Standard normal stream over a [`U64Stream`] via the Marsaglia polar method:
/// draw (u, v) uniform on (-1, 1)^2, accept when 0 < s = u^2 + v^2 < 1, and
/// return u * sqrt(-2 ln(s) / s) and v * sqrt(-2 ln(s) / s).
#[derive(Debug, Clone)]
pub struct NormalStream {
    inner: U64Stream,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(key: u64) -> Self {
        NormalStream {
            inner: U64Stream::new(key),
            spare: None,
        }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.inner.next_uniform() - 1.0;
            let v = 2.0 * self.inner.next_uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * factor);
                return u * factor;
            }
        }
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for slot in out.iter_mut() {
            *slot = self.next_normal();
        }
    }
}
