/// Counter-based SplitMix64 generator.
///
/// Stream `i` of seed `s` starts from `mix(s ^ mix(i + GOLDEN))`, where
/// `mix` is the SplitMix64 finalizer, so every (seed, stream) pair has its
/// own reproducible sequence. Only integer shifts, xors and wrapping
/// multiplies are used; float outputs are derived from the top 53 bits, so
/// sequences are identical on every platform.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    state: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        SeededRng {
            seed,
            stream,
            state: mix(seed ^ mix(stream.wrapping_add(GOLDEN))),
        }
    }

    /// Independent generator for sub-stream `index` of the same seed.
    pub fn substream(seed: u64, index: u64) -> Self {
        Self::new(seed, index)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi]`; returns `lo` exactly when the range is collapsed.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = self.next_f64();
        if lo == hi {
            lo
        } else {
            lo + (hi - lo) * u
        }
    }

    /// Uniform integer in `[0, n)` by multiply-high (bias below 2^-32 for the
    /// small ranges used here).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn range_inclusive(&mut self, lo: u32, hi: u32) -> u32 {
        lo + self.below((hi - lo) as u64 + 1) as u32
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// Uniformly distributed unit vector, by rejection from the square.
    pub fn unit_vector(&mut self) -> [f64; 2] {
        loop {
            let x = 2.0 * self.next_f64() - 1.0;
            let y = 2.0 * self.next_f64() - 1.0;
            let r2 = x * x + y * y;
            if r2 > 1e-12 && r2 <= 1.0 {
                let r = r2.sqrt();
                return [x / r, y / r];
            }
        }
    }
}
