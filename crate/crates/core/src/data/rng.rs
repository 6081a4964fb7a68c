use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic random stream.
///
/// Backed by ChaCha8, whose output is fixed by the seed independent of
/// platform and endianness. Streams are never shared between parallel tasks;
/// use [`derive_seed`] to fork child streams.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Child stream for `task`, independent of the parent's current position.
    pub fn child(&self, task: u64) -> Self {
        Self::new(derive_seed(self.seed, task))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash (parent seed, task id) into a child seed.
pub fn derive_seed(parent: u64, task: u64) -> u64 {
    splitmix64(parent ^ splitmix64(task.wrapping_add(0x632B_E59B_D9B4_E019)))
}
