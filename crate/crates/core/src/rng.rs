//! Named, seed-derived random streams.
//!
//! Every consumer of randomness derives its own generator from the run seed
//! and a stream name, so results do not depend on evaluation order or on
//! how work is split across threads.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for the stream `name` with integer sub-indices.
pub fn stream(seed: u64, name: &str, indices: &[u64]) -> StreamRng {
    let mut state = splitmix(seed ^ fnv1a(name.as_bytes()));
    for &i in indices {
        state = splitmix(state ^ splitmix(i.wrapping_add(0x51_7c_c1b7)));
    }
    ChaCha8Rng::seed_from_u64(state)
}

pub fn gaussian_vector(rng: &mut StreamRng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| StandardNormal.sample(rng))
}

/// Uniformly distributed direction on the unit sphere.
pub fn unit_vector(rng: &mut StreamRng, dim: usize) -> DVector<f64> {
    loop {
        let v = gaussian_vector(rng, dim);
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}
