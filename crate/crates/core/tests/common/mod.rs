#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stratnet::linalg::Mat;
use stratnet::NetworkSetting;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_mat(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// `A A^T / n + floor I`, comfortably positive definite.
pub fn spd(rng: &mut impl Rng, n: usize, floor: f64) -> Mat {
    let a = uniform_mat(rng, n, n, 1.0);
    let s = &a * a.transpose() / n as f64 + Mat::identity(n, n) * floor;
    (&s + s.transpose()) * 0.5
}

pub fn gammas(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.5..2.0)).collect()
}

/// Random strategic subset of at most `max` agents, ascending.
pub fn subset(rng: &mut impl Rng, n: usize, max: usize) -> Vec<usize> {
    let size = rng.random_range(0..=max.min(n));
    let mut all: Vec<usize> = (0..n).collect();
    for i in 0..size {
        let j = rng.random_range(i..n);
        all.swap(i, j);
    }
    let mut s = all[..size].to_vec();
    s.sort_unstable();
    s
}

pub fn random_setting(rng: &mut impl Rng, max_n: usize, max_s: usize) -> NetworkSetting {
    let n = rng.random_range(2..=max_n);
    let m = uniform_mat(rng, n, n, 3.0);
    let sigma = spd(rng, n, 0.3);
    let g = gammas(rng, n);
    let s = subset(rng, n, max_s);
    NetworkSetting::new(m, g, sigma, s).expect("valid random setting")
}
