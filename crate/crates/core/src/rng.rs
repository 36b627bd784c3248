//! Counter-based random numbers for the CA.
//!
//! Every draw is a pure function of `(seed, round, parcel)`, so parcels can be
//! evaluated in any order or in parallel and still see identical values.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a, used to derive stable per-city seeds from city ids.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

pub fn city_seed(global: u64, city_id: &str) -> u64 {
    mix64(global ^ mix64(hash_str(city_id).wrapping_add(GOLDEN)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { key: mix64(seed) }
    }

    pub fn u64_at(&self, round: u64, index: u64) -> u64 {
        let a = mix64(self.key ^ round.wrapping_mul(GOLDEN));
        mix64(a ^ index.wrapping_add(1).wrapping_mul(0xD6E8_FEB8_6659_FD93))
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn open01(&self, round: u64, index: u64) -> f64 {
        ((self.u64_at(round, index) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }
}
