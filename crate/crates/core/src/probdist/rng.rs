use rand::{Error, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded random stream with deterministic substream derivation.
///
/// `substream(i)` depends only on the stream's key and `i`, never on how many
/// draws have already been taken, so work split into indexed tasks gives the
/// same numbers whatever order (or thread) the tasks run on.
#[derive(Clone, Debug)]
pub struct RngStream {
    key: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { key: seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Child stream `index`. For a fixed parent the map `index -> key` is a
    /// bijection (composition of bijections on u64), so siblings never collide.
    pub fn substream(&self, index: u64) -> RngStream {
        let key = splitmix64(self.key.wrapping_add(splitmix64(index ^ 0xA5A5_5A5A_C3C3_3C3C)));
        RngStream::new(key)
    }

    /// Shorthand for a two-level derivation, e.g. `(replicate, group)`.
    pub fn substream2(&self, a: u64, b: u64) -> RngStream {
        self.substream(a).substream(b)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), Error> {
        self.inner.try_fill_bytes(dest)
    }
}
