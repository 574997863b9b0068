//! Deterministic sub-seed derivation.
//!
//! Every random stream in a run is keyed by a path of integers below the
//! master seed, e.g. `[CW_SCAN, power_index, detuning_index, SIMULATION]`.
//! Keys are mixed through a SplitMix64 chain, so a point's randomness does
//! not depend on which thread evaluates it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Identifier recorded in run manifests.
pub const SCHEME: &str = "splitmix64-chain/v1 over ChaCha8";

pub mod stream {
    pub const SIMULATION: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const GENERATOR: u64 = 3;

    pub const CW_SCAN: u64 = 0x101;
    pub const PULSED_SCAN: u64 = 0x102;
    pub const TWO_PULSE_RESET: u64 = 0x103;
    pub const PERSISTENCE: u64 = 0x104;
    pub const RESONANT_FRACTION: u64 = 0x105;
    pub const SWEEP_RATES: u64 = 0x106;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &key| {
        splitmix64(acc ^ splitmix64(key.wrapping_mul(GOLDEN)))
    })
}

pub fn rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Simulation and noise seeds for one measurement point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointSeeds {
    pub simulation: u64,
    pub noise: u64,
}

impl PointSeeds {
    pub fn new(master: u64, protocol: u64, condition: u64, point: u64) -> Self {
        Self {
            simulation: derive(master, &[protocol, condition, point, stream::SIMULATION]),
            noise: derive(master, &[protocol, condition, point, stream::NOISE]),
        }
    }
}
