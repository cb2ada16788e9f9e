use crate::real::Real;
use crate::tensor::Tensor;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based generator: draw `i` of stream `s` is a pure function of
/// `(seed, s, i)`, so sequences are identical on every platform.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Rng {
            seed,
            stream,
            counter: 0,
        }
    }

    /// Independent generator for a named sub-purpose.
    pub fn fork(&self, stream: u64) -> Self {
        Rng::with_stream(
            mix(self.seed ^ self.stream.wrapping_mul(GOLDEN)),
            stream.wrapping_add(1),
        )
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        let key = mix(self.seed.wrapping_add(self.stream.wrapping_mul(GOLDEN)));
        let out = mix(key ^ self.counter.wrapping_mul(GOLDEN).wrapping_add(GOLDEN));
        self.counter = self.counter.wrapping_add(1);
        out
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in the open interval `(lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        loop {
            let v = lo + (hi - lo) * self.next_f64();
            if v > lo && v < hi {
                return v;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        // Box-Muller; u1 kept away from zero
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_f64() * n as f64) as usize % n.max(1)
    }

    pub fn uniform_tensor<R: Real>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<R> {
        Tensor::from_fn(shape, |_| R::from_f64(self.uniform(lo, hi)))
    }

    pub fn normal_tensor<R: Real>(&mut self, shape: &[usize], std: f64) -> Tensor<R> {
        Tensor::from_fn(shape, |_| R::from_f64(std * self.normal()))
    }
}
