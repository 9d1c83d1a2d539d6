//! Labelled random sub-streams derived from one root seed.
//!
//! Each stochastic component asks for its own stream by label, so enabling
//! or disabling one component never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub const ARRIVALS: &str = "arrivals";
pub const ORIGINS: &str = "origins";
pub const DESTINATIONS: &str = "destinations";
pub const FLEET: &str = "fleet";
pub const PRICING: &str = "pricing";
pub const CRUISE: &str = "cruise";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Stream for `label`; `index` selects an independent ChaCha stream within it.
    pub fn stream(&self, label: &str, index: u64) -> SimRng {
        let mut h = self.root ^ 0x9E37_79B9_7F4A_7C15;
        for b in label.bytes() {
            h = splitmix64(h ^ u64::from(b));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(h));
        rng.set_stream(index);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
