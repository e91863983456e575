//! Grid-aligned singular controls, stopping indicators and policies written
//! as functionals of the driving noise.
//!
//! Conventions: the increment stored at step `k` is applied at `times[k]` and
//! first shows in the state at `k + 1` (left-continuous paths). The stopping
//! indicator with flip index `f` satisfies `η(t_k) = 1` iff `k > f`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::problem::ProblemSpec;
use crate::{Error, Result};

/// Uniform time grid `t0 = times[0] < … < times[n] = t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 || !(t0.is_finite() && t_end.is_finite() && t0 < t_end) {
            return Err(Error::InvalidArgument(format!(
                "time grid needs t0 < t_end and n_steps >= 1, got [{t0}, {t_end}] with {n_steps} steps"
            )));
        }
        Ok(TimeGrid { t0, t_end, n_steps })
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    /// `times[k]`; the last point is exactly `t_end`.
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.n_steps {
            self.t_end
        } else {
            self.t0 + (self.t_end - self.t0) * (k as f64 / self.n_steps as f64)
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    /// Index of the grid point equal to `t`, if any.
    pub fn step_of(&self, t: f64) -> Option<usize> {
        let guess = ((t - self.t0) / self.dt()).round();
        if !(guess >= 0.0 && guess <= self.n_steps as f64) {
            return None;
        }
        let k = guess as usize;
        (self.time(k) == t).then_some(k)
    }
}

/// Jordan decomposition of a singular control on a grid: per step, the
/// non-negative increments of `ξ⁺` and `ξ⁻`, stored row-major (`n_steps × d`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BVControlPath {
    pub grid: TimeGrid,
    pub dim: usize,
    inc_plus: Vec<f64>,
    inc_minus: Vec<f64>,
}

impl BVControlPath {
    pub fn zero(grid: TimeGrid, dim: usize) -> Self {
        BVControlPath {
            grid,
            dim,
            inc_plus: vec![0.0; grid.n_steps * dim],
            inc_minus: vec![0.0; grid.n_steps * dim],
        }
    }

    pub fn from_increments(grid: TimeGrid, dim: usize, inc_plus: Vec<f64>, inc_minus: Vec<f64>) -> Result<Self> {
        let want = grid.n_steps * dim;
        if inc_plus.len() != want || inc_minus.len() != want {
            return Err(Error::InvalidArgument(format!(
                "increment arrays must have length {want}, got {} and {}",
                inc_plus.len(),
                inc_minus.len()
            )));
        }
        for (i, (p, m)) in inc_plus.iter().zip(&inc_minus).enumerate() {
            if !(*p >= 0.0 && *m >= 0.0 && p.is_finite() && m.is_finite()) {
                return Err(Error::NegativeIncrement { step: i / dim.max(1) });
            }
        }
        Ok(BVControlPath {
            grid,
            dim,
            inc_plus,
            inc_minus,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps
    }

    pub fn plus(&self, k: usize) -> &[f64] {
        &self.inc_plus[k * self.dim..(k + 1) * self.dim]
    }

    pub fn minus(&self, k: usize) -> &[f64] {
        &self.inc_minus[k * self.dim..(k + 1) * self.dim]
    }

    /// Overwrites the increments at step `k`. Empty slices mean zero.
    pub fn set(&mut self, k: usize, plus: &[f64], minus: &[f64]) -> Result<()> {
        if k >= self.grid.n_steps {
            return Err(Error::IndexOutOfRange {
                index: k,
                limit: self.grid.n_steps,
            });
        }
        let d = self.dim;
        for (dst, src) in [(&mut self.inc_plus, plus), (&mut self.inc_minus, minus)] {
            let row = &mut dst[k * d..(k + 1) * d];
            if src.is_empty() {
                row.fill(0.0);
                continue;
            }
            if src.len() != d {
                return Err(Error::InvalidArgument(format!("increment must have length {d}")));
            }
            if src.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::NegativeIncrement { step: k });
            }
            row.copy_from_slice(src);
        }
        Ok(())
    }

    /// Total variation of step `k` alone.
    pub fn step_variation(&self, k: usize) -> f64 {
        self.plus(k).iter().chain(self.minus(k)).sum()
    }

    /// `ξ` at `times[k]`: sum of net increments strictly before step `k`.
    pub fn xi(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for j in 0..k.min(self.grid.n_steps) {
            for (o, (p, m)) in out.iter_mut().zip(self.plus(j).iter().zip(self.minus(j))) {
                *o += p - m;
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, eta: Option<&EtaPath>, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["step".to_string(), "time".to_string()];
        header.extend((0..self.dim).map(|i| format!("inc_plus_{i}")));
        header.extend((0..self.dim).map(|i| format!("inc_minus_{i}")));
        header.push("eta".into());
        wr.write_record(&header)?;
        for k in 0..=self.grid.n_steps {
            let mut row = vec![k.to_string(), fmt_f64(self.grid.time(k))];
            for src in [&self.inc_plus, &self.inc_minus] {
                for i in 0..self.dim {
                    let v = if k < self.grid.n_steps { src[k * self.dim + i] } else { 0.0 };
                    row.push(fmt_f64(v));
                }
            }
            row.push(eta.map_or(0, |e| e.eta_at(k) as u8).to_string());
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Shortest round-trip formatting used by every CSV writer in the crate.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Non-decreasing `{0, 1}` path with `η(t_k) = 1` iff `k > flip_index`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EtaPath {
    pub grid: TimeGrid,
    pub flip_index: Option<usize>,
}

impl EtaPath {
    pub fn never(grid: TimeGrid) -> Self {
        EtaPath { grid, flip_index: None }
    }

    /// `η(t_k)`.
    pub fn eta_at(&self, k: usize) -> bool {
        self.flip_index.is_some_and(|f| k > f)
    }

    /// `η(t_k+)`, the value on the open interval after `t_k`.
    pub fn eta_right(&self, k: usize) -> bool {
        self.flip_index.is_some_and(|f| k >= f)
    }

    /// Step index of the associated stopping time (`n_steps` if none).
    pub fn tau_step(&self) -> usize {
        self.flip_index.map_or(self.grid.n_steps, |f| f.min(self.grid.n_steps))
    }
}

/// Two indicators are equal when they agree on `[t0, t_end]`: a flip at the
/// horizon is indistinguishable from no flip.
impl PartialEq for EtaPath {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.tau_step() == other.tau_step()
    }
}

pub fn eta_to_tau(eta: &EtaPath) -> f64 {
    match eta.flip_index {
        Some(f) => eta.grid.time(f),
        None => eta.grid.t_end,
    }
}

pub fn eta_to_tau_step(eta: &EtaPath) -> usize {
    eta.tau_step()
}

pub fn tau_to_eta(tau_step: usize, grid: TimeGrid) -> Result<EtaPath> {
    if tau_step > grid.n_steps {
        return Err(Error::IndexOutOfRange {
            index: tau_step,
            limit: grid.n_steps,
        });
    }
    Ok(EtaPath {
        grid,
        flip_index: Some(tau_step),
    })
}

/// Sum of `inc_plus + inc_minus` over steps `[from_step, to_step)` and all coordinates.
pub fn total_variation(xi: &BVControlPath, from_step: usize, to_step: usize) -> Result<f64> {
    let n = xi.n_steps();
    if to_step > n {
        return Err(Error::IndexOutOfRange { index: to_step, limit: n });
    }
    if from_step > to_step {
        return Err(Error::IndexOutOfRange {
            index: from_step,
            limit: to_step,
        });
    }
    Ok((from_step..to_step).map(|k| xi.step_variation(k)).sum())
}

/// `Z[k] = z0 + V[0, k)`, for `k = 0..=n_steps`.
pub fn fuel_process(xi: &BVControlPath, z0: f64) -> Result<Vec<f64>> {
    if !(z0 >= 0.0) {
        return Err(Error::InvalidArgument(format!("z0 must be >= 0, got {z0}")));
    }
    let mut out = Vec::with_capacity(xi.n_steps() + 1);
    let mut v = 0.0;
    out.push(z0);
    for k in 0..xi.n_steps() {
        v += xi.step_variation(k);
        out.push(z0 + v);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    /// Drop the first increment that would push the variation above the
    /// budget, and everything after it.
    #[default]
    Strict,
    /// Like `Strict`, but keep the part of the crossing increment that
    /// exactly exhausts the budget.
    Clip,
}

/// Relative slack under which a cumulative variation still counts as within budget.
pub const BUDGET_TOL: f64 = 1e-12;

pub(crate) fn exceeds_budget(used: f64, budget: f64) -> bool {
    used > budget + BUDGET_TOL * budget.max(1.0)
}

/// Truncation of the control at the fuel budget, counted from `from_step`.
///
/// An increment that lands exactly on the budget is kept, so a control that
/// already respects the budget is returned unchanged.
pub fn truncate_control(
    xi: &BVControlPath,
    from_step: usize,
    budget: f64,
    mode: TruncationMode,
) -> Result<BVControlPath> {
    if !(budget >= 0.0) {
        return Err(Error::InvalidArgument(format!("budget must be >= 0, got {budget}")));
    }
    let n = xi.n_steps();
    if from_step > n {
        return Err(Error::IndexOutOfRange {
            index: from_step,
            limit: n,
        });
    }
    let d = xi.dim;
    let mut out = xi.clone();
    let mut used = 0.0;
    let mut exhausted = false;
    for k in from_step..n {
        let row = k * d..(k + 1) * d;
        if exhausted {
            out.inc_plus[row.clone()].fill(0.0);
            out.inc_minus[row].fill(0.0);
            continue;
        }
        let step = xi.step_variation(k);
        if !exceeds_budget(used + step, budget) {
            used += step;
            continue;
        }
        exhausted = true;
        let keep = match mode {
            TruncationMode::Strict => 0.0,
            TruncationMode::Clip => ((budget - used) / step).clamp(0.0, 1.0),
        };
        for v in &mut out.inc_plus[row.clone()] {
            *v *= keep;
        }
        for v in &mut out.inc_minus[row] {
            *v *= keep;
        }
    }
    Ok(out)
}

/// What a policy does at one grid step. Empty increment vectors mean zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Decision {
    pub stop: bool,
    pub action: usize,
    pub inc_plus: Vec<f64>,
    pub inc_minus: Vec<f64>,
}

impl Decision {
    pub fn run(action: usize) -> Self {
        Decision {
            action,
            ..Decision::default()
        }
    }

    pub fn stop() -> Self {
        Decision {
            stop: true,
            ..Decision::default()
        }
    }

    pub fn exert(action: usize, inc_plus: Vec<f64>, inc_minus: Vec<f64>) -> Self {
        Decision {
            stop: false,
            action,
            inc_plus,
            inc_minus,
        }
    }
}

/// Noise increments `ΔW[0..len)` visible to a policy.
#[derive(Debug, Clone, Copy)]
pub struct NoiseView<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> NoiseView<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Self {
        NoiseView { data, dim }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn increment(&self, k: usize) -> &'a [f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    /// Increments from step `from` on.
    pub fn suffix(&self, from: usize) -> NoiseView<'a> {
        NoiseView {
            data: &self.data[from * self.dim..],
            dim: self.dim,
        }
    }

    pub fn raw(&self) -> &'a [f64] {
        self.data
    }
}

/// Observed state history `X[0..=k]`, `Z[0..=k]` at step `k`.
#[derive(Debug, Clone, Copy)]
pub struct StateView<'a> {
    pub t: f64,
    xs: &'a [f64],
    zs: &'a [f64],
    dim: usize,
}

impl<'a> StateView<'a> {
    pub fn new(t: f64, xs: &'a [f64], zs: &'a [f64], dim: usize) -> Self {
        debug_assert_eq!(xs.len(), zs.len() * dim);
        StateView { t, xs, zs, dim }
    }

    pub fn step(&self) -> usize {
        self.zs.len() - 1
    }

    pub fn x(&self) -> &'a [f64] {
        self.x_at(self.step())
    }

    pub fn z(&self) -> f64 {
        self.zs[self.step()]
    }

    pub fn x_at(&self, k: usize) -> &'a [f64] {
        &self.xs[k * self.dim..(k + 1) * self.dim]
    }

    pub fn z_at(&self, k: usize) -> f64 {
        self.zs[k]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// A control treble written as a deterministic functional of the observed
/// noise (and, in feedback form, of the induced state history).
///
/// `decide` at step `k` sees `ΔW[0..k)` only, so every implementation is
/// non-anticipative by construction.
pub trait NoiseFunctionalPolicy: Send + Sync {
    fn decide(&self, step: usize, noise: NoiseView<'_>, state: Option<StateView<'_>>) -> Decision;
}

impl<P: NoiseFunctionalPolicy + ?Sized> NoiseFunctionalPolicy for &P {
    fn decide(&self, step: usize, noise: NoiseView<'_>, state: Option<StateView<'_>>) -> Decision {
        (**self).decide(step, noise, state)
    }
}

impl<P: NoiseFunctionalPolicy + ?Sized> NoiseFunctionalPolicy for Box<P> {
    fn decide(&self, step: usize, noise: NoiseView<'_>, state: Option<StateView<'_>>) -> Decision {
        (**self).decide(step, noise, state)
    }
}

impl<P: NoiseFunctionalPolicy + ?Sized> NoiseFunctionalPolicy for std::sync::Arc<P> {
    fn decide(&self, step: usize, noise: NoiseView<'_>, state: Option<StateView<'_>>) -> Decision {
        (**self).decide(step, noise, state)
    }
}

/// Adapts a closure into a policy.
pub struct FnPolicy<F>(pub F);

impl<F> NoiseFunctionalPolicy for FnPolicy<F>
where
    F: Fn(usize, NoiseView<'_>, Option<StateView<'_>>) -> Decision + Send + Sync,
{
    fn decide(&self, step: usize, noise: NoiseView<'_>, state: Option<StateView<'_>>) -> Decision {
        (self.0)(step, noise, state)
    }
}

/// Never stops, always plays one action, never exerts.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantPolicy {
    pub action: usize,
}

impl NoiseFunctionalPolicy for ConstantPolicy {
    fn decide(&self, _: usize, _: NoiseView<'_>, _: Option<StateView<'_>>) -> Decision {
        Decision::run(self.action)
    }
}

/// Stops unconditionally at a fixed step.
#[derive(Debug, Clone, Copy)]
pub struct StopAtStep {
    pub step: usize,
    pub action: usize,
}

impl NoiseFunctionalPolicy for StopAtStep {
    fn decide(&self, step: usize, _: NoiseView<'_>, _: Option<StateView<'_>>) -> Decision {
        if step >= self.step {
            Decision::stop()
        } else {
            Decision::run(self.action)
        }
    }
}

/// Optional state integration during replay.
#[derive(Debug, Clone, Copy)]
pub struct StateTrack<'a> {
    pub spec: &'a ProblemSpec,
    pub x0: &'a [f64],
    pub z0: f64,
    /// Reported in error messages.
    pub path_index: usize,
}

/// A materialised control treble and, when tracked, the induced state.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub control: BVControlPath,
    pub eta: EtaPath,
    pub actions: Vec<usize>,
    /// `X[0..=n]` row-major, present when a state track was given.
    pub states: Option<Vec<f64>>,
    /// `Z[0..=n]`, present when a state track was given.
    pub fuel: Option<Vec<f64>>,
}

/// Materialises `(ξ, η, α)` from one noise realisation.
///
/// With a state track the policy sees the Euler–Maruyama state history and,
/// under finite fuel, increments are gated by Strict truncation against the
/// budget `zbar - z0`. After a stop every later increment is zero and the
/// action is frozen.
pub fn replay_policy(
    policy: &dyn NoiseFunctionalPolicy,
    grid: TimeGrid,
    noise: &[f64],
    noise_dim: usize,
    control_dim: usize,
    track: Option<StateTrack<'_>>,
) -> Result<Replay> {
    let n = grid.n_steps;
    if noise.len() != n * noise_dim {
        return Err(Error::InvalidArgument(format!(
            "noise has length {}, expected {}",
            noise.len(),
            n * noise_dim
        )));
    }
    let d = control_dim;
    let mut control = BVControlPath::zero(grid, d);
    let mut actions = vec![0usize; n];
    let mut flip = None;

    let mut states = None;
    let mut fuel = None;
    let mut budget = f64::INFINITY;
    let mut scratch = Scratch::default();
    if let Some(tr) = &track {
        let spec = tr.spec;
        if spec.dims.state != d || spec.dims.noise != noise_dim || tr.x0.len() != d {
            return Err(Error::InvalidArgument("replay dimensions do not match the problem".into()));
        }
        if !(tr.z0 >= 0.0) {
            return Err(Error::InvalidArgument(format!("z0 must be >= 0, got {}", tr.z0)));
        }
        if let Some(zbar) = spec.zbar() {
            if tr.z0 > zbar {
                return Err(Error::InvalidArgument(format!("z0 = {} exceeds zbar = {zbar}", tr.z0)));
            }
            budget = zbar - tr.z0;
        }
        let mut xs = Vec::with_capacity((n + 1) * d);
        xs.extend_from_slice(tr.x0);
        states = Some(xs);
        let mut zs = Vec::with_capacity(n + 1);
        zs.push(tr.z0);
        fuel = Some(zs);
        scratch = Scratch::new(d, noise_dim);
    }

    let mut used = 0.0;
    let mut exhausted = false;
    let mut frozen_action = 0usize;
    for k in 0..n {
        let mut step_var = 0.0;
        if flip.is_some() {
            actions[k] = frozen_action;
        } else {
            let view = match (&states, &fuel) {
                (Some(xs), Some(zs)) => Some(StateView::new(grid.time(k), xs, zs, d)),
                _ => None,
            };
            let dec = policy.decide(k, NoiseView::new(&noise[..k * noise_dim], noise_dim), view);
            if let Some(tr) = &track {
                if dec.action >= tr.spec.action_set.len() {
                    return Err(Error::IndexOutOfRange {
                        index: dec.action,
                        limit: tr.spec.action_set.len(),
                    });
                }
            }
            actions[k] = dec.action;
            frozen_action = dec.action;
            if dec.stop {
                flip = Some(k);
            } else {
                control.set(k, &dec.inc_plus, &dec.inc_minus)?;
                step_var = control.step_variation(k);
                if step_var > 0.0 {
                    if exhausted || exceeds_budget(used + step_var, budget) {
                        exhausted = true;
                        control.set(k, &[], &[])?;
                        step_var = 0.0;
                    } else {
                        used += step_var;
                    }
                }
            }
        }
        if let (Some(tr), Some(xs), Some(zs)) = (&track, states.as_mut(), fuel.as_mut()) {
            let t = grid.time(k);
            let x: Vec<f64> = xs[k * d..(k + 1) * d].to_vec();
            let next = scratch.euler_step(
                tr.spec,
                t,
                grid.dt(),
                &x,
                actions[k],
                &noise[k * noise_dim..(k + 1) * noise_dim],
                control.plus(k),
                control.minus(k),
            );
            if let Some(what) = next {
                return Err(Error::NonFinite {
                    what,
                    path: tr.path_index,
                    step: k,
                });
            }
            xs.extend_from_slice(&scratch.next);
            zs.push(zs[k] + step_var);
        }
    }
    Ok(Replay {
        control,
        eta: EtaPath { grid, flip_index: flip },
        actions,
        states,
        fuel,
    })
}

/// Reusable buffers for one Euler–Maruyama step.
#[derive(Debug, Default)]
pub(crate) struct Scratch {
    mu: Vec<f64>,
    sigma: Vec<f64>,
    pub(crate) next: Vec<f64>,
    noise_dim: usize,
}

impl Scratch {
    pub(crate) fn new(d: usize, noise_dim: usize) -> Self {
        Scratch {
            mu: vec![0.0; d],
            sigma: vec![0.0; d * noise_dim],
            next: vec![0.0; d],
            noise_dim,
        }
    }

    /// Writes `x + μ dt + σ ΔW + Δξ` into `self.next`; returns the name of
    /// the offending quantity if anything is non-finite.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn euler_step(
        &mut self,
        spec: &ProblemSpec,
        t: f64,
        dt: f64,
        x: &[f64],
        action: usize,
        dw: &[f64],
        plus: &[f64],
        minus: &[f64],
    ) -> Option<&'static str> {
        let dp = self.noise_dim;
        spec.drift_at(t, x, action, &mut self.mu);
        if self.mu.iter().any(|v| !v.is_finite()) {
            return Some("drift");
        }
        spec.diffusion_at(t, x, action, &mut self.sigma);
        if self.sigma.iter().any(|v| !v.is_finite()) {
            return Some("diffusion");
        }
        for i in 0..x.len() {
            let mut s = x[i] + self.mu[i] * dt;
            for j in 0..dp {
                s += self.sigma[i * dp + j] * dw[j];
            }
            s += plus[i] - minus[i];
            self.next[i] = s;
        }
        if self.next.iter().any(|v| !v.is_finite()) {
            return Some("state");
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Dims, FuelMode};

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(0.0, 1.0, n).unwrap()
    }

    fn path_1d(n: usize, plus: &[(usize, f64)], minus: &[(usize, f64)]) -> BVControlPath {
        let mut p = vec![0.0; n];
        let mut m = vec![0.0; n];
        for &(k, v) in plus {
            p[k] = v;
        }
        for &(k, v) in minus {
            m[k] = v;
        }
        BVControlPath::from_increments(grid(n), 1, p, m).unwrap()
    }

    #[test]
    fn grid_endpoints_are_exact() {
        let g = TimeGrid::new(0.3, 1.7, 7).unwrap();
        assert_eq!(g.time(0), 0.3);
        assert_eq!(g.time(7), 1.7);
        assert!(g.times().windows(2).all(|w| w[0] < w[1]));
        assert!(TimeGrid::new(1.0, 1.0, 3).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn variation_examples() {
        let n = 6;
        let one = path_1d(n, &[(3, 2.0)], &[]);
        assert_eq!(total_variation(&one, 0, n).unwrap(), 2.0);
        assert_eq!(total_variation(&BVControlPath::zero(grid(n), 1), 0, n).unwrap(), 0.0);
        let both = path_1d(n, &[(1, 1.0)], &[(2, 1.0)]);
        assert_eq!(total_variation(&both, 0, n).unwrap(), 2.0);
        assert!(total_variation(&both, 0, n + 1).is_err());
        assert!(total_variation(&both, 3, 2).is_err());
    }

    #[test]
    fn fuel_examples() {
        let n = 4;
        assert_eq!(
            fuel_process(&BVControlPath::zero(grid(n), 1), 0.7).unwrap(),
            vec![0.7; n + 1]
        );
        let first = path_1d(n, &[(0, 1.0)], &[]);
        assert_eq!(fuel_process(&first, 0.0).unwrap(), vec![0.0, 1.0, 1.0, 1.0, 1.0]);
        let pm = path_1d(n, &[(1, 1.0)], &[(2, 1.0)]);
        assert_eq!(*fuel_process(&pm, 0.0).unwrap().last().unwrap(), 2.0);
        assert!(fuel_process(&pm, -0.1).is_err());
    }

    #[test]
    fn eta_tau_examples() {
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        assert_eq!(eta_to_tau(&EtaPath::never(g)), 1.0);
        assert_eq!(eta_to_tau(&tau_to_eta(2, g).unwrap()), 0.5);
        let last = tau_to_eta(4, g).unwrap();
        assert!((0..=4).all(|k| !last.eta_at(k)));
        let first = tau_to_eta(0, g).unwrap();
        assert!(!first.eta_at(0));
        assert!((1..=4).all(|k| first.eta_at(k)));
        assert!(tau_to_eta(5, g).is_err());
        assert_eq!(last, EtaPath::never(g));
    }

    #[test]
    fn truncation_examples() {
        let n = 6;
        let three = path_1d(n, &[(1, 1.0), (2, 2.0)], &[]);
        assert_eq!(truncate_control(&three, 0, 5.0, TruncationMode::Strict).unwrap(), three);

        let t0 = truncate_control(&three, 0, 0.0, TruncationMode::Strict).unwrap();
        assert_eq!(total_variation(&t0, 0, n).unwrap(), 0.0);

        let two = path_1d(n, &[(1, 1.0), (4, 1.0)], &[]);
        let s = truncate_control(&two, 0, 1.5, TruncationMode::Strict).unwrap();
        assert_eq!(s, path_1d(n, &[(1, 1.0)], &[]));
        let c = truncate_control(&two, 0, 1.5, TruncationMode::Clip).unwrap();
        assert_eq!(c, path_1d(n, &[(1, 1.0), (4, 0.5)], &[]));
        assert!(truncate_control(&two, 0, -1.0, TruncationMode::Strict).is_err());
    }

    #[test]
    fn truncation_keeps_prefix_and_exact_budget() {
        let n = 5;
        let p = path_1d(n, &[(0, 4.0), (2, 1.0), (3, 1.0)], &[(1, 1.0)]);
        let t = truncate_control(&p, 1, 2.0, TruncationMode::Strict).unwrap();
        assert_eq!(t.plus(0), &[4.0]);
        assert_eq!(t.minus(1), &[1.0]);
        assert_eq!(t.plus(2), &[1.0]);
        assert_eq!(t.plus(3), &[0.0]);
    }

    #[test]
    fn replay_basic_policies() {
        let g = grid(5);
        let noise = vec![0.1; 5];
        let r = replay_policy(&ConstantPolicy::default(), g, &noise, 1, 1, None).unwrap();
        assert_eq!(r.control, BVControlPath::zero(g, 1));
        assert_eq!(r.eta.flip_index, None);

        let stop = StopAtStep { step: 2, action: 0 };
        let a = replay_policy(&stop, g, &noise, 1, 1, None).unwrap();
        let b = replay_policy(&stop, g, &[-3.0; 5], 1, 1, None).unwrap();
        assert_eq!(a.eta.flip_index, Some(2));
        assert_eq!(b.eta.flip_index, Some(2));
    }

    #[test]
    fn replay_rejects_negative_increments() {
        let pol = FnPolicy(|k: usize, _: NoiseView<'_>, _: Option<StateView<'_>>| {
            if k == 1 {
                Decision::exert(0, vec![-1.0], vec![])
            } else {
                Decision::run(0)
            }
        });
        let err = replay_policy(&pol, grid(3), &[0.0; 3], 1, 1, None).unwrap_err();
        assert!(matches!(err, Error::NegativeIncrement { step: 1 }));
    }

    #[test]
    fn replay_freezes_after_stop_and_gates_fuel() {
        let spec = ProblemSpec::builder(
            Dims {
                state: 1,
                noise: 1,
                action: 2,
            },
            1.0,
        )
        .actions(vec![vec![0.0, 0.0], vec![1.0, 0.0]])
        .fuel(FuelMode::Finite { zbar: 1.0 })
        .build();
        let pol = FnPolicy(|k: usize, _: NoiseView<'_>, _: Option<StateView<'_>>| match k {
            0..=2 => Decision::exert(1, vec![0.4], vec![]),
            3 => Decision::exert(1, vec![0.1], vec![]),
            4 => Decision::stop(),
            _ => Decision::exert(0, vec![5.0], vec![]),
        });
        let track = StateTrack {
            spec: &spec,
            x0: &[0.0],
            z0: 0.2,
            path_index: 0,
        };
        let r = replay_policy(&pol, grid(6), &[0.0; 6], 1, 1, Some(track)).unwrap();
        // Budget 0.8: steps 0 and 1 fit, step 2 crosses, everything later is dropped.
        assert_eq!(r.control.plus(0), &[0.4]);
        assert_eq!(r.control.plus(1), &[0.4]);
        assert_eq!(r.control.plus(2), &[0.0]);
        assert_eq!(r.control.plus(3), &[0.0]);
        assert_eq!(r.eta.flip_index, Some(4));
        assert_eq!(r.actions[5], r.actions[4]);
        assert_eq!(r.control.plus(5), &[0.0]);
        let z = r.fuel.unwrap();
        assert!((z[6] - 1.0).abs() < 1e-15);
        assert!((r.states.unwrap()[6] - 0.8).abs() < 1e-15);
    }
}
