//! Self-supervised pretraining of accelerometer encoders and a benchmark
//! harness comparing frozen against fine-tuned encoders for activity
//! recognition.

pub mod autograd;
pub mod engine;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod models;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod sampler;
pub mod synth;
pub mod tensor;
pub mod transforms;

pub use error::{Error, Result};

/// Mixes `salt` into `base` (splitmix64 finaliser per word) so that
/// independent streams can be derived from one run seed.
pub fn derive_seed(base: u64, salt: &[u64]) -> u64 {
    let mut z = base;
    for &s in salt {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(s.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}
