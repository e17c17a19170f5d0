//! Deterministic counter-based random numbers.
//!
//! Sampling routines take a caller-supplied seed and must replay exactly, in
//! any evaluation order. A counter-based generator (SplitMix64 finalizer over
//! `key, counter`) gives that: stream `i` of seed `s` is independent of how
//! many draws other streams made, so parallel samplers stay deterministic.

#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng {
            key: mix(seed ^ GOLDEN),
            counter: 0,
        }
    }

    /// Independent substream; draws from it never collide with the parent.
    pub fn split(&self, stream: u64) -> Self {
        CounterRng {
            key: mix(self.key ^ stream.wrapping_mul(GOLDEN).wrapping_add(0x1F12_3BB5)),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let c = self.counter;
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(c.wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 bits of mantissa.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let mut u1 = self.uniform();
        if u1 < 1e-300 {
            u1 = 1e-300;
        }
        let u2 = self.uniform();
        crate::math::sqrt(-2.0 * crate::math::ln(u1)) * crate::math::cos(crate::math::TAU * u2)
    }

    /// Uniform direction on the unit sphere in `dim` dimensions.
    pub fn unit_vector(&mut self, dim: usize) -> alloc::vec::Vec<f64> {
        loop {
            let v: alloc::vec::Vec<f64> = (0..dim).map(|_| self.normal()).collect();
            let n = crate::linalg::norm(&v);
            if n > 1e-8 {
                return v.iter().map(|x| x / n).collect();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_streams() {
        let mut a = CounterRng::new(7);
        let mut b = CounterRng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut s1 = CounterRng::new(7).split(1);
        let mut s2 = CounterRng::new(7).split(2);
        assert_ne!(s1.next_u64(), s2.next_u64());
    }

    #[test]
    fn uniform_range_and_moments() {
        let mut r = CounterRng::new(3);
        let mut sum = 0.0;
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        assert!((sum / 10_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn unit_vectors_have_norm_one() {
        let mut r = CounterRng::new(11);
        for dim in [1usize, 2, 3, 6] {
            let v = r.unit_vector(dim);
            assert!((crate::linalg::norm(&v) - 1.0).abs() < 1e-12);
        }
    }
}
