//! Supermartingale property of `M_u = N_u + v(u, X_u, Z_u) 1{τ∧ρ >= u}`.

use serde::{Deserialize, Serialize};

use super::dpp::{value_until, Horizon};
use crate::payoff::MTrace;
use crate::solver::{Lattice, LatticePolicy, TransitionModel, ValueField};
use crate::stats::Estimate;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub policies: usize,
    /// Largest `E[M_s | node at u] - M_u` over policies, pairs `u <= s` and
    /// nodes; must be `<= tol`.
    pub max_violation: f64,
    /// Largest `|E[M_s | node at u] - M_u|` under the optimal policy.
    pub optimal_gap: Option<f64>,
    pub tol: f64,
    pub passed: bool,
}

/// Exact conditional expectations on the lattice.
///
/// For each `s`, the value of following a policy from any node at `u <= s`
/// until `s` and collecting `v` there is `E[M_s - N_u | node at u]`, so the
/// supermartingale inequality reads `W_s(u, node) <= v(u, node)`.
pub fn check_supermartingale_exact(
    lat: &Lattice,
    tr: &TransitionModel,
    field: &ValueField,
    policies: &[&dyn LatticePolicy],
    optimal: Option<&dyn LatticePolicy>,
    tol: f64,
) -> Result<MartingaleReport> {
    let n = lat.n_steps();
    let len = lat.slice_len();
    let mut max_violation = f64::NEG_INFINITY;
    for p in policies {
        for s in 0..=n {
            let w = value_until(lat, tr, field, *p, &Horizon::Step { u: s })?;
            for i in 0..(s + 1) * len {
                max_violation = max_violation.max(w[i] - field.values[i]);
            }
        }
    }
    let optimal_gap = match optimal {
        None => None,
        Some(p) => {
            let mut gap: f64 = 0.0;
            for s in 0..=n {
                let w = value_until(lat, tr, field, p, &Horizon::Step { u: s })?;
                for i in 0..(s + 1) * len {
                    let d = w[i] - field.values[i];
                    gap = gap.max(d.abs());
                    max_violation = max_violation.max(d);
                }
            }
            Some(gap)
        }
    };
    if max_violation == f64::NEG_INFINITY {
        max_violation = 0.0;
    }
    let passed = max_violation <= tol && optimal_gap.is_none_or(|g| g <= tol);
    Ok(MartingaleReport {
        policies: policies.len(),
        max_violation,
        optimal_gap,
        tol,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloPair {
    pub u: usize,
    pub s: usize,
    /// Estimate of `E[M_{s∧end} - M_{u∧end}]`.
    pub drift: Estimate,
    pub passed: bool,
}

/// Monte Carlo version on a simulated bundle's `M` trace.
///
/// `ends[i]` is `τ∧ρ` on path `i`. Checks `E[M_{s∧end}] <= E[M_{u∧end}] +
/// z·SE` on paired differences for every pair from `steps`, and two-sided
/// equality when `optimal` is set.
pub fn check_supermartingale_mc(trace: &MTrace, ends: &[usize], steps: &[usize], optimal: bool, z: f64) -> Vec<MonteCarloPair> {
    let mut out = Vec::new();
    for (a, &u) in steps.iter().enumerate() {
        for &s in &steps[a + 1..] {
            let diffs: Vec<f64> = trace
                .paths
                .iter()
                .zip(ends)
                .map(|(p, &e)| p.m[s.min(e)] - p.m[u.min(e)])
                .collect();
            let est = Estimate::from_samples(&diffs);
            let bound = z * est.std_error + 1e-12;
            let passed = if optimal { est.mean.abs() <= bound } else { est.mean <= bound };
            out.push(MonteCarloPair { u, s, drift: est, passed });
        }
    }
    out
}
