//! Deterministic named random streams derived from one seed.
//!
//! Every consumer asks for its own child stream by name and index tuple
//! (e.g. `("cell", [group, response, time])`), so results do not depend on
//! the order or the thread in which streams are drawn.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The stream identified by `name` and `index`.
    pub fn child(&self, name: &str, index: &[u64]) -> ChaCha8Rng {
        // FNV-1a over the name, then mix in each index.
        let mut key = 0xcbf2_9ce4_8422_2325u64;
        for b in name.bytes() {
            key ^= b as u64;
            key = key.wrapping_mul(0x0100_0000_01b3);
        }
        for &i in index {
            key = splitmix(key ^ splitmix(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(key);
        rng
    }
}
