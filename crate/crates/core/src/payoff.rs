//! Objective functionals on discretised paths: costs of control, `Γ` and
//! `Λ`, Monte Carlo estimates of `J`, and the `N` / `M` processes.
//!
//! Every integral runs over the half-open window `[s, τ∧ρ)`: the increment
//! scheduled at the final step is never charged. When exit and stop happen
//! at the same step the exit gain is paid, and at the horizon (no exit, no
//! stop) the exit gain `g1(T, ·)` is the terminal payoff.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::controls::{fmt_f64, NoiseFunctionalPolicy, TimeGrid};
use crate::par;
use crate::problem::{CostConvention, ProblemSpec};
use crate::simulate::{check_start, simulate_one, PathBundle, SamplePath, SimOptions};
use crate::stats::Estimate;
use crate::{Error, Result};

/// Two-point Gauss–Legendre rule on `panels` equal panels of `[0, len]`.
fn gauss_legendre(len: f64, panels: usize, mut g: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let off = 0.5 / 3f64.sqrt();
    let w = len / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * w;
        total += 0.5 * w * (g(mid - off * w)? + g(mid + off * w)?);
    }
    Ok(total)
}

/// Buffers for cost evaluation.
#[derive(Debug, Clone)]
pub struct CostScratch {
    c: Vec<f64>,
    y: Vec<f64>,
}

impl CostScratch {
    pub fn new(d: usize) -> Self {
        CostScratch {
            c: vec![0.0; d],
            y: vec![0.0; d],
        }
    }
}

/// Cost of the increment `(plus, minus)` applied at `(t, x)`.
///
/// Under the segment-integral convention the jump is traversed in two legs,
/// first along `plus` priced by `c⁺`, then along `-minus` priced by `c⁻`,
/// each parametrised by arc length in the 1-norm (the unit of variation).
pub fn jump_cost(
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    plus: &[f64],
    minus: &[f64],
    buf: &mut CostScratch,
) -> Result<f64> {
    let lp: f64 = plus.iter().sum();
    let lm: f64 = minus.iter().sum();
    if lp == 0.0 && lm == 0.0 {
        return Ok(0.0);
    }
    match spec.cost_convention {
        CostConvention::Stieltjes => {
            let mut total = 0.0;
            if lp != 0.0 {
                (spec.cost_plus)(t, x, &mut buf.c);
                total += buf.c.iter().zip(plus).map(|(c, p)| c * p).sum::<f64>();
            }
            if lm != 0.0 {
                (spec.cost_minus)(t, x, &mut buf.c);
                total += buf.c.iter().zip(minus).map(|(c, m)| c * m).sum::<f64>();
            }
            Ok(total)
        }
        CostConvention::SegmentIntegral { quadrature_steps } => {
            let mut total = 0.0;
            let CostScratch { c, y } = buf;
            if lp > 0.0 {
                total += gauss_legendre(lp, quadrature_steps, |lam| {
                    for i in 0..x.len() {
                        y[i] = x[i] + lam * plus[i] / lp;
                    }
                    uniform_cost(&*spec.cost_plus, t, y, c)
                })?;
            }
            if lm > 0.0 {
                total += gauss_legendre(lm, quadrature_steps, |lam| {
                    for i in 0..x.len() {
                        y[i] = x[i] + plus[i] - lam * minus[i] / lm;
                    }
                    uniform_cost(&*spec.cost_minus, t, y, c)
                })?;
            }
            Ok(total)
        }
    }
}

fn uniform_cost(f: &(dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync), t: f64, y: &[f64], c: &mut [f64]) -> Result<f64> {
    f(t, y, c);
    if !crate::problem::is_uniform(c) {
        return Err(Error::MalformedSpec(format!(
            "segment-integral cost is not coordinate-uniform at t={t}, x={y:?}: {c:?}"
        )));
    }
    Ok(c[0])
}

/// Cost of control over steps `[from, to)`.
pub fn cost_window(spec: &ProblemSpec, path: &SamplePath, from: usize, to: usize) -> Result<f64> {
    let n = path.grid().n_steps;
    if from > to || to > n {
        return Err(Error::IndexOutOfRange { index: to, limit: n });
    }
    let mut buf = CostScratch::new(path.dim());
    let g = path.grid();
    let mut total = 0.0;
    for k in from..to {
        total += jump_cost(spec, g.time(k), path.x(k), path.control.plus(k), path.control.minus(k), &mut buf)?;
    }
    Ok(total)
}

/// Cost of control over `[t0, times[upto_step])`.
pub fn cost_integral(spec: &ProblemSpec, path: &SamplePath, upto_step: usize) -> Result<f64> {
    cost_window(spec, path, 0, upto_step)
}

fn running(spec: &ProblemSpec, path: &SamplePath, k: usize, dt: f64) -> f64 {
    spec.running_gain_at(path.grid().time(k), path.x(k), path.z(k), path.actions[k]) * dt
}

fn check_payoff(v: f64, path: usize, step: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: "payoff",
            path,
            step,
        })
    }
}

/// `Γ_s`: gains minus costs on `[s, τ∧ρ)` plus the exit or stopping payoff.
pub fn evaluate_gamma(spec: &ProblemSpec, path: &SamplePath, from_step: usize) -> Result<f64> {
    let end = path.end_step();
    if from_step > end {
        return Err(Error::InvalidArgument(format!(
            "Γ needs from_step <= τ∧ρ = {end}, got {from_step}"
        )));
    }
    let g = path.grid();
    let dt = g.dt();
    let mut buf = CostScratch::new(path.dim());
    let mut gain = 0.0;
    let mut cost = 0.0;
    for k in from_step..end {
        gain += running(spec, path, k, dt);
        cost += jump_cost(spec, g.time(k), path.x(k), path.control.plus(k), path.control.minus(k), &mut buf)?;
    }
    let terminal = if path.rho_step <= path.tau_step {
        let r = path.rho_step;
        spec.exit_gain_at(g.time(r), path.x(r), path.z(r))
    } else {
        let s = path.tau_step;
        spec.stop_gain_at(g.time(s), path.x(s), path.z(s))
    };
    Ok(gain - cost + terminal)
}

/// `Λ_s`: the same payoff written with the stopping indicator `η` in place
/// of `τ`, integrated up to `ρ`.
pub fn evaluate_lambda(spec: &ProblemSpec, path: &SamplePath, from_step: usize) -> Result<f64> {
    let rho = path.rho_step;
    let g = path.grid();
    if from_step > g.n_steps {
        return Err(Error::IndexOutOfRange {
            index: from_step,
            limit: g.n_steps,
        });
    }
    let dt = g.dt();
    let eta = &path.eta;
    let mut buf = CostScratch::new(path.dim());
    let mut gain = 0.0;
    let mut cost = 0.0;
    let mut stop_term = 0.0;
    for k in from_step..rho {
        let live = if eta.eta_right(k) { 0.0 } else { 1.0 };
        if live != 0.0 {
            gain += live * running(spec, path, k, dt);
            cost += live
                * jump_cost(spec, g.time(k), path.x(k), path.control.plus(k), path.control.minus(k), &mut buf)?;
        }
        let d_eta = eta.eta_right(k) as u8 as f64 - eta.eta_at(k) as u8 as f64;
        if d_eta != 0.0 {
            stop_term += d_eta * spec.stop_gain_at(g.time(k), path.x(k), path.z(k));
        }
    }
    let exit_weight = if eta.eta_at(rho) { 0.0 } else { 1.0 };
    let exit_term = if exit_weight != 0.0 {
        exit_weight * spec.exit_gain_at(g.time(rho), path.x(rho), path.z(rho))
    } else {
        0.0
    };
    Ok(gain - cost + (exit_term + stop_term))
}

/// Monte Carlo estimate of `J` from `Γ_{t}` on every path.
pub fn evaluate_j(spec: &ProblemSpec, bundle: &PathBundle) -> Result<Estimate> {
    if bundle.paths.is_empty() {
        return Err(Error::InvalidArgument("empty bundle".into()));
    }
    let vals = par::try_map_range(bundle.paths.len(), |i| {
        let p = &bundle.paths[i];
        check_payoff(evaluate_gamma(spec, p, 0)?, i, p.end_step())
    })?;
    Ok(Estimate::from_samples(&vals))
}

/// What a streaming simulation keeps per path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub gamma: f64,
    pub tau_step: usize,
    pub rho_step: usize,
    pub x_end: Vec<f64>,
    pub z_end: f64,
}

/// Simulates and reduces each path to a [`PathSummary`] without keeping
/// the full bundle in memory.
#[allow(clippy::too_many_arguments)]
pub fn simulate_summaries(
    spec: &ProblemSpec,
    policy: &dyn NoiseFunctionalPolicy,
    x0: &[f64],
    z0: f64,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
    opts: SimOptions,
) -> Result<Vec<PathSummary>> {
    check_start(spec, x0, z0, &grid)?;
    par::try_map_range(n_paths, |i| {
        let p = simulate_one(spec, policy, x0, z0, grid, seed, i, opts)?;
        let n = grid.n_steps;
        Ok(PathSummary {
            gamma: check_payoff(evaluate_gamma(spec, &p, 0)?, i, p.end_step())?,
            tau_step: p.tau_step,
            rho_step: p.rho_step,
            x_end: p.x(n).to_vec(),
            z_end: p.z(n),
        })
    })
}

/// Streaming Monte Carlo estimate of `J`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_j(
    spec: &ProblemSpec,
    policy: &dyn NoiseFunctionalPolicy,
    x0: &[f64],
    z0: f64,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
    opts: SimOptions,
) -> Result<Estimate> {
    let s = simulate_summaries(spec, policy, x0, z0, grid, n_paths, seed, opts)?;
    let g: Vec<f64> = s.iter().map(|p| p.gamma).collect();
    Ok(Estimate::from_samples(&g))
}

/// Source of `v(u, x, z)` for the `M` process.
pub trait ValueLookup: Sync {
    fn id(&self) -> String;
    /// Value at grid step `k`; the flag is set when the point lies outside
    /// the covered region and a nearest-node extension was used.
    fn lookup(&self, k: usize, x: &[f64], z: f64) -> (f64, bool);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathTrace {
    pub n: Vec<f64>,
    pub m: Vec<f64>,
    pub gamma: Vec<Option<f64>>,
    pub lambda: Vec<Option<f64>>,
    /// Number of steps where the value lookup was extrapolated.
    pub extrapolated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MTrace {
    pub value_field_ref: String,
    pub n_steps: usize,
    pub paths: Vec<PathTrace>,
}

impl MTrace {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["path", "step", "n", "m", "gamma", "lambda"])?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for (pi, p) in self.paths.iter().enumerate() {
            for u in 0..=self.n_steps {
                wr.write_record([
                    pi.to_string(),
                    u.to_string(),
                    fmt_f64(p.n[u]),
                    fmt_f64(p.m[u]),
                    opt(p.gamma[u]),
                    opt(p.lambda[u]),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// `N_u` for `u = 0..=n` on one path.
pub fn n_process(spec: &ProblemSpec, path: &SamplePath) -> Result<Vec<f64>> {
    let g = path.grid();
    let n = g.n_steps;
    let dt = g.dt();
    let end = path.end_step();
    let (tau, rho) = (path.tau_step, path.rho_step);
    let mut buf = CostScratch::new(path.dim());
    let mut out = Vec::with_capacity(n + 1);
    let mut gain = 0.0;
    let mut cost = 0.0;
    for u in 0..=n {
        if u > 0 && u - 1 < end {
            let k = u - 1;
            gain += running(spec, path, k, dt);
            cost += jump_cost(spec, g.time(k), path.x(k), path.control.plus(k), path.control.minus(k), &mut buf)?;
        }
        let mut v = gain - cost;
        if rho <= tau && rho < u {
            v += spec.exit_gain_at(g.time(rho), path.x(rho), path.z(rho));
        }
        if tau < u.min(rho) {
            v += spec.stop_gain_at(g.time(tau), path.x(tau), path.z(tau));
        }
        out.push(v);
    }
    Ok(out)
}

/// `M_u = N_u + v(u, X_u, Z_u) 1{τ∧ρ >= u}` on every path; `Γ_u` and `Λ_u`
/// are filled in on `u <= τ∧ρ` when `with_gamma` is set.
pub fn compute_m(spec: &ProblemSpec, bundle: &PathBundle, values: &dyn ValueLookup, with_gamma: bool) -> Result<MTrace> {
    let n = bundle.grid.n_steps;
    let paths = par::try_map_range(bundle.paths.len(), |i| {
        let p = &bundle.paths[i];
        let nn = n_process(spec, p)?;
        let end = p.end_step();
        let mut m = Vec::with_capacity(n + 1);
        let mut extrapolated = 0;
        let mut gamma = vec![None; n + 1];
        let mut lambda = vec![None; n + 1];
        for u in 0..=n {
            let mut v = nn[u];
            if end >= u {
                let (val, ext) = values.lookup(u, p.x(u), p.z(u));
                extrapolated += ext as usize;
                v += val;
                if with_gamma {
                    gamma[u] = Some(evaluate_gamma(spec, p, u)?);
                    lambda[u] = Some(evaluate_lambda(spec, p, u)?);
                }
            }
            m.push(check_payoff(v, i, u)?);
        }
        Ok::<_, Error>(PathTrace {
            n: nn,
            m,
            gamma,
            lambda,
            extrapolated,
        })
    })?;
    Ok(MTrace {
        value_field_ref: values.id(),
        n_steps: n,
        paths,
    })
}
