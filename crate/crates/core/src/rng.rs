//! Counter-based random streams.
//!
//! A [`SeedSpec`] names a stream by a master seed plus a chain of
//! `(purpose, index)` labels. Deriving a child label is a pure function of
//! the parent key, so any consumer can rebuild the stream for "projection
//! burst 17 of data point 402" without touching shared state. That is what
//! keeps parallel dataset generation independent of the thread schedule.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// What a stream is used for. The tag values are part of the reproducibility
/// contract and must never change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Path,
    Subsample,
    Projection,
    Covariance,
    Burst,
    Split,
    Init,
    Shuffle,
    Diagnostic,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Path => 0x5041_5448,
            Purpose::Subsample => 0x5355_4253,
            Purpose::Projection => 0x5052_4f4a,
            Purpose::Covariance => 0x434f_5641,
            Purpose::Burst => 0x4255_5253,
            Purpose::Split => 0x5350_4c49,
            Purpose::Init => 0x494e_4954,
            Purpose::Shuffle => 0x5348_5546,
            Purpose::Diagnostic => 0x4449_4147,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    #[serde(default)]
    pub labels: Vec<(Purpose, u64)>,
}

impl SeedSpec {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed, labels: Vec::new() }
    }

    pub fn derive(&self, purpose: Purpose, index: u64) -> SeedSpec {
        let mut labels = self.labels.clone();
        labels.push((purpose, index));
        SeedSpec { master_seed: self.master_seed, labels }
    }

    /// 64-bit key identifying this stream.
    pub fn key(&self) -> u64 {
        self.labels.iter().fold(mix64(self.master_seed ^ 0x736c_6f77_6d61_7073), |k, &(p, i)| {
            mix64(mix64(k ^ p.tag()).wrapping_add(i.wrapping_mul(GOLDEN_GAMMA)))
        })
    }

    pub fn stream(&self) -> Stream {
        Stream::from_key(self.key())
    }
}

/// SplitMix64 stream: output `n` is `mix64(key + (n + 1) * gamma)`.
#[derive(Debug, Clone)]
pub struct Stream {
    state: u64,
}

impl Stream {
    pub fn from_key(key: u64) -> Self {
        Self { state: key }
    }

    #[inline]
    fn next(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal variate (ziggurat).
    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.sample(StandardNormal)
    }

    pub fn fill_normal(&mut self, out: &mut [f64], std_dev: f64) {
        for v in out {
            *v = std_dev * self.normal();
        }
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        (self.next() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = self.next().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}
