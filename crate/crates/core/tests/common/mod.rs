#![allow(dead_code)]

use cofrnet::{CoFrNetModel, FeatureMask, Ladder, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// A full ladder whose tails all stay at least `margin` away from zero at
/// `x`, so that clamped and exact evaluation agree and nothing is near a pole.
pub fn ladder_away_from_poles(
    rng: &mut ChaCha8Rng,
    p: usize,
    depth: usize,
    x: &[f64],
    margin: f64,
) -> Ladder {
    loop {
        let weights = uniform_vec(rng, (depth + 1) * (p + 1), -1.5, 1.5);
        let ladder = Ladder::from_flat(depth, p, FeatureMask::Full, weights).unwrap();
        if min_tail(&ladder, x) >= margin {
            return ladder;
        }
    }
}

/// Smallest `|z_k|` along the exact evaluation of `ladder` at `x`.
pub fn min_tail(ladder: &Ladder, x: &[f64]) -> f64 {
    let a = ladder.affine(x).unwrap();
    let mut tail = 0.0;
    let mut m = f64::INFINITY;
    for &ak in a[1..].iter().rev() {
        let z = ak + tail;
        m = m.min(z.abs());
        tail = 1.0 / z;
    }
    m
}

/// Model with `l` full ladders, all unclamped at `x` with the given margin.
pub fn model_away_from_poles(
    rng: &mut ChaCha8Rng,
    p: usize,
    q: usize,
    depths: &[usize],
    x: &[f64],
    margin: f64,
) -> CoFrNetModel {
    let ladders: Vec<Ladder> = depths
        .iter()
        .map(|&d| ladder_away_from_poles(rng, p, d, x, margin))
        .collect();
    let mixing = uniform_vec(rng, ladders.len() * q, -1.0, 1.0);
    let bias = uniform_vec(rng, q, -1.0, 1.0);
    CoFrNetModel::new(Variant::F, ladders, mixing, bias, 0.1).unwrap()
}
