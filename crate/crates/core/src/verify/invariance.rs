//! Independence from the noise construction, and continuity under fuel truncation.

use serde::{Deserialize, Serialize};

use crate::controls::{truncate_control, NoiseFunctionalPolicy, TimeGrid, TruncationMode};
use crate::payoff::{evaluate_gamma, simulate_summaries};
use crate::problem::ProblemSpec;
use crate::simulate::{integrate_treble, path_noise, simulate_on_noise, NoiseConstruction, NoiseOptions, SimOptions};
use crate::stats::{ks_critical_value, ks_statistic, Estimate};
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvarianceOptions {
    pub first: NoiseConstruction,
    pub second: NoiseConstruction,
    /// KS significance level.
    pub alpha: f64,
    /// Standard errors allowed between the two estimates.
    pub z: f64,
}

impl Default for InvarianceOptions {
    fn default() -> Self {
        InvarianceOptions {
            first: NoiseConstruction::Direct,
            second: NoiseConstruction::BrownianBridge,
            alpha: 0.01,
            z: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsRow {
    pub coordinate: String,
    pub statistic: f64,
    pub critical: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub j1: Estimate,
    pub j2: Estimate,
    pub combined_se: f64,
    pub ks: Vec<KsRow>,
    pub passed: bool,
}

/// Estimates `J` twice, on seed `seeds.0` with `opts.first` and on seed
/// `seeds.1` with `opts.second`, and compares the laws of
/// `(τ, ρ, X_T, Z_T)` coordinate by coordinate.
#[allow(clippy::too_many_arguments)]
pub fn check_reference_invariance(
    spec: &ProblemSpec,
    policy: &dyn NoiseFunctionalPolicy,
    x0: &[f64],
    z0: f64,
    grid: TimeGrid,
    n_paths: usize,
    seeds: (u64, u64),
    opts: InvarianceOptions,
) -> Result<InvarianceReport> {
    let run = |seed, construction| {
        let sim = SimOptions {
            noise: NoiseOptions {
                construction,
                antithetic: false,
            },
        };
        simulate_summaries(spec, policy, x0, z0, grid, n_paths, seed, sim)
    };
    let a = run(seeds.0, opts.first)?;
    let b = run(seeds.1, opts.second)?;
    let j1 = Estimate::from_samples(&a.iter().map(|p| p.gamma).collect::<Vec<_>>());
    let j2 = Estimate::from_samples(&b.iter().map(|p| p.gamma).collect::<Vec<_>>());
    let combined_se = (j1.std_error.powi(2) + j2.std_error.powi(2)).sqrt();

    let mut columns: Vec<(String, Box<dyn Fn(&crate::payoff::PathSummary) -> f64>)> = vec![
        ("tau".into(), Box::new(|p| p.tau_step as f64)),
        ("rho".into(), Box::new(|p| p.rho_step as f64)),
    ];
    for i in 0..spec.dims.state {
        columns.push((format!("x_end[{i}]"), Box::new(move |p| p.x_end[i])));
    }
    columns.push(("z_end".into(), Box::new(|p| p.z_end)));
    let critical = ks_critical_value(opts.alpha, a.len(), b.len());
    let ks: Vec<KsRow> = columns
        .into_iter()
        .map(|(coordinate, f)| {
            let statistic = ks_statistic(&a.iter().map(&f).collect::<Vec<_>>(), &b.iter().map(&f).collect::<Vec<_>>());
            KsRow {
                coordinate,
                statistic,
                critical,
                passed: statistic <= critical,
            }
        })
        .collect();
    let passed = (j1.mean - j2.mean).abs() <= opts.z * combined_se && ks.iter().all(|r| r.passed);
    Ok(InvarianceReport {
        j1,
        j2,
        combined_se,
        ks,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityRow {
    pub pair: usize,
    pub policy: usize,
    /// `Γ(x1, z1, ξ) - Γ(x2, z2, [ξ]^{z2})` pathwise.
    pub difference: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub rows: Vec<ContinuityRow>,
    /// Largest `|mean difference|`.
    pub max_difference: f64,
    /// Standard error of the row attaining it.
    pub std_error: f64,
}

/// Start point `(x, z)`.
pub type StartPoint = (Vec<f64>, f64);

/// Plays each policy from `(x1, z1)` at step `u`, truncates the resulting
/// control (Strict) to the budget `zbar - z2` and replays the same noise,
/// stop rule and actions from `(x2, z2)`. A diagnostic: nothing is asserted.
#[allow(clippy::too_many_arguments)]
pub fn check_truncation_continuity(
    spec: &ProblemSpec,
    grid: TimeGrid,
    u: usize,
    pairs: &[(StartPoint, StartPoint)],
    policies: &[&dyn NoiseFunctionalPolicy],
    delta: f64,
    n_paths: usize,
    seed: u64,
) -> Result<ContinuityReport> {
    let Some(zbar) = spec.zbar() else {
        return Err(Error::InvalidArgument("truncation continuity needs finite fuel".into()));
    };
    if u > grid.n_steps {
        return Err(Error::IndexOutOfRange {
            index: u,
            limit: grid.n_steps,
        });
    }
    let sub = TimeGrid::new(grid.time(u), grid.t_end, grid.n_steps - u)?;
    let mut spec_u = spec.clone();
    spec_u.start_t = sub.t0;
    let dp = spec.dims.noise;
    let mut rows = Vec::new();
    for (pi, ((x1, z1), (x2, z2))) in pairs.iter().enumerate() {
        if z2 < z1 {
            return Err(Error::InvalidArgument(format!("pair {pi}: z2 = {z2} < z1 = {z1}")));
        }
        let dist = (x1.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() + (z2 - z1).powi(2)).sqrt();
        if dist >= delta {
            return Err(Error::InvalidArgument(format!("pair {pi}: distance {dist} is not below {delta}")));
        }
        for (qi, policy) in policies.iter().enumerate() {
            let diffs = par::try_map_range(n_paths, |i| -> Result<f64> {
                let noise = path_noise(&sub, dp, seed, i, NoiseOptions::default());
                let p1 = simulate_on_noise(&spec_u, *policy, x1, *z1, sub, noise.clone(), i)?;
                let xi2 = truncate_control(&p1.control, 0, zbar - z2, TruncationMode::Strict)?;
                let p2 = integrate_treble(&spec_u, sub, noise, x2, *z2, xi2, p1.eta, p1.actions.clone(), i)?;
                Ok(evaluate_gamma(&spec_u, &p1, 0)? - evaluate_gamma(&spec_u, &p2, 0)?)
            })?;
            rows.push(ContinuityRow {
                pair: pi,
                policy: qi,
                difference: Estimate::from_samples(&diffs),
            });
        }
    }
    let worst = rows
        .iter()
        .max_by(|a, b| a.difference.mean.abs().total_cmp(&b.difference.mean.abs()));
    Ok(ContinuityReport {
        max_difference: worst.map_or(0.0, |r| r.difference.mean.abs()),
        std_error: worst.map_or(0.0, |r| r.difference.std_error),
        rows,
    })
}
