//! Counter-based seed derivation.
//!
//! Every random stream in the simulator is keyed by the master seed plus a
//! tuple of counters (purpose, member, input, ...). Streams never depend on
//! scheduling, so results are identical for any worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream purposes. Keeps unrelated streams from colliding on equal counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Programming = 1,
    Inference = 2,
    Software = 3,
    Training = 4,
    Dataset = 5,
    SampleCheck = 6,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn derive_seed(master: u64, stream: Stream, counters: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ splitmix64(stream as u64));
    for &c in counters {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

pub fn stream_rng(master: u64, stream: Stream, counters: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, stream, counters))
}
