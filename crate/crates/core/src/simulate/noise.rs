//! Brownian increments from counter-based substreams.
//!
//! Path `i` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `i`, so
//! the noise of a path never depends on how many paths are generated or on
//! which thread generates them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::controls::TimeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseConstruction {
    /// Independent `N(0, dt)` increments drawn in time order.
    #[default]
    Direct,
    /// Lévy construction: `W_T` first, then midpoints of ever finer
    /// intervals from the Brownian bridge.
    BrownianBridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NoiseOptions {
    #[serde(default)]
    pub construction: NoiseConstruction,
    /// Pair paths `2i` and `2i + 1` on the same substream with opposite signs.
    #[serde(default)]
    pub antithetic: bool,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Increments `ΔW[k][j]` of path `path_index`, row-major (`n_steps × noise_dim`).
pub fn path_noise(grid: &TimeGrid, noise_dim: usize, seed: u64, path_index: usize, opts: NoiseOptions) -> Vec<f64> {
    let (stream, sign) = if opts.antithetic {
        ((path_index / 2) as u64, if path_index % 2 == 1 { -1.0 } else { 1.0 })
    } else {
        (path_index as u64, 1.0)
    };
    let mut rng = stream_rng(seed, stream);
    let mut out = match opts.construction {
        NoiseConstruction::Direct => direct(grid, noise_dim, &mut rng),
        NoiseConstruction::BrownianBridge => bridge(grid, noise_dim, &mut rng),
    };
    if sign < 0.0 {
        out.iter_mut().for_each(|v| *v = -*v);
    }
    out
}

fn direct(grid: &TimeGrid, noise_dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sd = grid.dt().sqrt();
    (0..grid.n_steps * noise_dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * sd
        })
        .collect()
}

fn bridge(grid: &TimeGrid, noise_dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = grid.n_steps;
    let dt = grid.dt();
    let mut out = vec![0.0; n * noise_dim];
    let mut w = vec![0.0; n + 1];
    let mut queue = std::collections::VecDeque::new();
    for j in 0..noise_dim {
        w.fill(0.0);
        let z: f64 = StandardNormal.sample(rng);
        w[n] = z * (n as f64 * dt).sqrt();
        queue.clear();
        queue.push_back((0usize, n));
        while let Some((lo, hi)) = queue.pop_front() {
            if hi - lo < 2 {
                continue;
            }
            let mid = lo + (hi - lo) / 2;
            let (a, b) = ((mid - lo) as f64, (hi - mid) as f64);
            let mean = w[lo] + a / (a + b) * (w[hi] - w[lo]);
            let sd = (a * b / (a + b) * dt).sqrt();
            let z: f64 = StandardNormal.sample(rng);
            w[mid] = mean + sd * z;
            queue.push_back((lo, mid));
            queue.push_back((mid, hi));
        }
        for k in 0..n {
            out[k * noise_dim + j] = w[k + 1] - w[k];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_critical_value, ks_statistic, sample_variance};

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let g = grid(8);
        let o = NoiseOptions::default();
        assert_eq!(path_noise(&g, 2, 7, 3, o), path_noise(&g, 2, 7, 3, o));
        assert_ne!(path_noise(&g, 2, 7, 3, o), path_noise(&g, 2, 7, 4, o));
        assert_ne!(path_noise(&g, 2, 7, 3, o), path_noise(&g, 2, 8, 3, o));
    }

    #[test]
    fn antithetic_pairs_mirror() {
        let g = grid(5);
        let o = NoiseOptions {
            antithetic: true,
            ..Default::default()
        };
        let a = path_noise(&g, 1, 1, 4, o);
        let b = path_noise(&g, 1, 1, 5, o);
        assert!(a.iter().zip(&b).all(|(x, y)| *x == -*y));
    }

    #[test]
    fn bridge_endpoint_and_increment_laws() {
        // Terminal value ~ N(0, T) and a middle increment ~ N(0, dt) under both
        // constructions; compared by variance and by a two-sample KS test.
        let g = grid(6);
        let n = 20_000;
        let mut ends = [Vec::new(), Vec::new()];
        let mut incs = [Vec::new(), Vec::new()];
        for (c, kind) in [NoiseConstruction::Direct, NoiseConstruction::BrownianBridge].iter().enumerate() {
            let o = NoiseOptions {
                construction: *kind,
                antithetic: false,
            };
            for i in 0..n {
                let w = path_noise(&g, 1, 11 + c as u64, i, o);
                ends[c].push(w.iter().sum::<f64>());
                incs[c].push(w[3]);
            }
        }
        for c in 0..2 {
            let v = sample_variance(&ends[c]);
            let se = (2.0 / n as f64).sqrt();
            assert!((v - 1.0).abs() < 4.0 * se, "variance {v}");
            let vi = sample_variance(&incs[c]);
            assert!((vi / g.dt() - 1.0).abs() < 4.0 * se, "increment variance {vi}");
        }
        let crit = ks_critical_value(0.01, n, n);
        assert!(ks_statistic(&ends[0], &ends[1]) < crit);
        assert!(ks_statistic(&incs[0], &incs[1]) < crit);
    }
}
