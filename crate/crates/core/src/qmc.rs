//! Deterministic low-discrepancy samplers and seeded random substreams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

const PRIMES: [u32; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

/// Random generator for a named substream of a master seed.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a keeps stream ids stable across platforms and releases
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h);
    rng
}

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    r
}

/// Halton sequence with a Cranley-Patterson rotation.
#[derive(Debug, Clone)]
pub struct Halton {
    dim: usize,
    shift: Vec<f64>,
    index: u64,
}

impl Halton {
    pub fn new(dim: usize, seed: u64, stream: &str) -> Self {
        assert!(dim <= PRIMES.len(), "Halton dimension too large");
        let mut rng = substream(seed, stream);
        let shift = (0..dim).map(|_| rng.gen::<f64>()).collect();
        Halton { dim, shift, index: 1 }
    }

    /// Unshifted sequence, for samplers that must not depend on a seed.
    pub fn plain(dim: usize) -> Self {
        assert!(dim <= PRIMES.len(), "Halton dimension too large");
        Halton { dim, shift: vec![0.0; dim], index: 1 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Next point of (0,1)^dim.
    pub fn next_point(&mut self, out: &mut [f64]) {
        for k in 0..self.dim {
            let mut x = radical_inverse(self.index, PRIMES[k]) + self.shift[k];
            if x >= 1.0 {
                x -= 1.0;
            }
            // keep away from the endpoints so inverse CDFs stay finite
            out[k] = x.clamp(1e-15, 1.0 - 1e-15);
        }
        self.index += 1;
    }
}

/// Maps uniform points to normal deviates through the inverse CDF.
pub struct Gaussianizer {
    normal: Normal,
}

impl Default for Gaussianizer {
    fn default() -> Self {
        Gaussianizer { normal: Normal::new(0.0, 1.0).expect("standard normal") }
    }
}

impl Gaussianizer {
    pub fn apply(&self, x: &mut [f64]) {
        for v in x.iter_mut() {
            *v = self.normal.inverse_cdf(*v);
        }
    }
}

/// Quasi-random points on the unit sphere of R^dim.
pub struct SphereSampler {
    halton: Halton,
    gauss: Gaussianizer,
    buf: Vec<f64>,
}

impl SphereSampler {
    pub fn new(dim: usize, seed: u64, stream: &str) -> Self {
        SphereSampler { halton: Halton::new(dim, seed, stream), gauss: Gaussianizer::default(), buf: vec![0.0; dim] }
    }

    pub fn next_point(&mut self, out: &mut [f64]) {
        loop {
            self.halton.next_point(&mut self.buf);
            self.gauss.apply(&mut self.buf);
            let r = self.buf.iter().map(|x| x * x).sum::<f64>().sqrt();
            if r > 1e-9 {
                for (o, x) in out.iter_mut().zip(&self.buf) {
                    *o = x / r;
                }
                return;
            }
        }
    }
}

/// Quasi-random points of the unit ball in R^dim (cube rejection).
pub struct BallSampler {
    halton: Halton,
    buf: Vec<f64>,
}

impl BallSampler {
    pub fn new(dim: usize) -> Self {
        BallSampler { halton: Halton::plain(dim), buf: vec![0.0; dim] }
    }

    pub fn next_point(&mut self, out: &mut [f64]) {
        loop {
            self.halton.next_point(&mut self.buf);
            let mut r2 = 0.0;
            for (o, x) in out.iter_mut().zip(&self.buf) {
                *o = 2.0 * x - 1.0;
                r2 += *o * *o;
            }
            if r2 < 1.0 {
                return;
            }
        }
    }

    pub fn take(&mut self, count: usize) -> Vec<Vec<f64>> {
        let d = self.buf.len();
        (0..count)
            .map(|_| {
                let mut p = vec![0.0; d];
                self.next_point(&mut p);
                p
            })
            .collect()
    }
}

/// Volume of the unit ball in R^d.
pub fn unit_ball_volume(d: usize) -> f64 {
    // V_d = 2 pi / d * V_{d-2}
    let mut v = if d % 2 == 0 { 1.0 } else { 2.0 };
    let mut k = if d % 2 == 0 { 2 } else { 3 };
    while k <= d {
        v *= 2.0 * std::f64::consts::PI / k as f64;
        k += 2;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_volumes() {
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-14);
        assert!((unit_ball_volume(3) - 4.0 / 3.0 * std::f64::consts::PI).abs() < 1e-14);
        let v5 = 8.0 * std::f64::consts::PI.powi(2) / 15.0;
        assert!((unit_ball_volume(5) - v5).abs() < 1e-14);
    }

    #[test]
    fn halton_is_deterministic_and_uniform() {
        let mut a = Halton::new(3, 5, "t");
        let mut b = Halton::new(3, 5, "t");
        let mut p = [0.0; 3];
        let mut q = [0.0; 3];
        let mut mean = [0.0; 3];
        for _ in 0..4096 {
            a.next_point(&mut p);
            b.next_point(&mut q);
            assert_eq!(p, q);
            for k in 0..3 {
                mean[k] += p[k] / 4096.0;
            }
        }
        for m in mean {
            assert!((m - 0.5).abs() < 2e-3);
        }
    }

    #[test]
    fn substreams_differ() {
        let x: u64 = substream(1, "a").gen();
        let y: u64 = substream(1, "b").gen();
        let z: u64 = substream(1, "a").gen();
        assert_ne!(x, y);
        assert_eq!(x, z);
    }

    #[test]
    fn sphere_points_are_unit() {
        let mut s = SphereSampler::new(4, 3, "s");
        let mut p = [0.0; 4];
        for _ in 0..100 {
            s.next_point(&mut p);
            let r: f64 = p.iter().map(|x| x * x).sum();
            assert!((r - 1.0).abs() < 1e-14);
        }
    }
}
