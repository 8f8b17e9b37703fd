//! Counter-based random streams.
//!
//! Every consumer derives its generator from `(seed, stream, counter)`, so
//! the numbers drawn for trial `t` never depend on how many workers ran or in
//! which order trials were scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named stream identifiers keep unrelated consumers apart.
pub mod streams {
    pub const COMASS: u64 = 0x636f_6d61_7373;
    pub const QC_TRIAL: u64 = 0x7163_7472_6961;
    pub const QC_SHARPEN: u64 = 0x7163_7368_7270;
    pub const GRADIENT_CHECK: u64 = 0x6772_6164_6368;
    pub const COERCIVITY: u64 = 0x636f_6572_6369;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The generator for `counter` within `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64, counter: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = splitmix64(seed ^ splitmix64(stream));
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(counter);
    rng
}

/// A standard normal draw.
pub fn normal<R: rand::Rng>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}
