//! Counter-style random streams.
//!
//! Every random draw in the crate comes from a stream addressed by
//! `(seed, domain, step, member)`. Two calls with the same key produce the
//! same numbers no matter which thread asks or in which order, so parallel
//! member updates never change a trajectory.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Independent purposes that draw randomness; each gets its own key space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    ObservationPerturbation = 1,
    FlowNoise = 2,
    PcnProposal = 3,
    DiffusionNoise = 4,
    KlCoefficients = 5,
    PriorDraw = 6,
    ObservationNoise = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The generator for one `(seed, domain, step, member)` key.
pub fn substream(seed: u64, domain: Domain, step: u64, member: u64) -> ChaCha12Rng {
    let a = splitmix64(seed ^ splitmix64(domain as u64));
    let b = splitmix64(a ^ splitmix64(step.wrapping_add(0x5851_f42d_4c95_7f2d)));
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&a.to_le_bytes());
    key[8..16].copy_from_slice(&b.to_le_bytes());
    key[16..24].copy_from_slice(&splitmix64(b).to_le_bytes());
    key[24..].copy_from_slice(&step.to_le_bytes());
    let mut rng = ChaCha12Rng::from_seed(key);
    rng.set_stream(member);
    rng
}

pub fn standard_normal_vector<R: rand::Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| StandardNormal.sample(rng)))
}
