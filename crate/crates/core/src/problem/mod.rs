//! Problem instances: coefficients, payoffs, costs, domain and fuel mode.
//!
//! A [`ProblemSpec`] is immutable once built and cheap to clone (all
//! coefficient functions sit behind `Arc`). Coefficients must be pure.
//!
//! Conventions used throughout the crate:
//!
//! * `drift(t, x, a, out)` writes `μ(t, x, a)` (length `d`).
//! * `diffusion(t, x, a, out)` writes `σ(t, x, a)` row-major (`d × d'`).
//! * `running_gain(t, x, z, a)`, `exit_gain(t, x, z)`, `stop_gain(t, x, z)`.
//! * `cost_plus(t, x, out)` / `cost_minus(t, x, out)` write per-coordinate
//!   unit costs of pushing the state up / down.
//! * `domain(x, z)` is the membership test of the open set the state lives in
//!   before exit.
//!
//! There is no separate terminal function: at the horizon the exit gain is
//! paid, because the exit time is capped at `T`.

mod config;
mod validate;

pub use config::{
    load_problem, parse_problem, CostForm, DiffusionForm, DomainForm, DriftForm, GainForm, Monomial, ProblemConfig,
};
pub(crate) use validate::is_uniform;
pub use validate::{validate_problem, validate_problem_in, CheckStatus, ProbeRegion, ValidationCheck, ValidationReport};

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type VectorFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type GainFn = Arc<dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(f64, &[f64], f64) -> f64 + Send + Sync>;
pub type CostFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type DomainFn = Arc<dyn Fn(&[f64], f64) -> bool + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// State dimension `d`.
    pub state: usize,
    /// Noise dimension `d'`.
    pub noise: usize,
    /// Classical control dimension `l`.
    pub action: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FuelMode {
    /// Total variation of the singular control may not exceed `zbar - z`.
    Finite { zbar: f64 },
    /// Unlimited fuel; `p` is the integrability exponent of the variation.
    Infinite { p: f64 },
}

impl FuelMode {
    pub fn zbar(&self) -> Option<f64> {
        match *self {
            FuelMode::Finite { zbar } => Some(zbar),
            FuelMode::Infinite { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CostConvention {
    /// Classical Lebesgue–Stieltjes integral: cost evaluated before the jump.
    Stieltjes,
    /// Cost integrated along the straight segment traversed by each jump.
    SegmentIntegral { quadrature_steps: usize },
}

/// Which directions of each coordinate the singular control may push.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exertable {
    pub plus: bool,
    pub minus: bool,
}

impl Default for Exertable {
    fn default() -> Self {
        Exertable {
            plus: true,
            minus: true,
        }
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub horizon: f64,
    pub start_t: f64,
    pub dims: Dims,
    pub drift: VectorFn,
    pub diffusion: VectorFn,
    pub running_gain: GainFn,
    pub exit_gain: TerminalFn,
    pub stop_gain: TerminalFn,
    pub cost_plus: CostFn,
    pub cost_minus: CostFn,
    pub domain: DomainFn,
    pub action_set: Vec<Vec<f64>>,
    pub fuel_mode: FuelMode,
    pub cost_convention: CostConvention,
    pub payoff_floor: f64,
    pub exertable: Vec<Exertable>,
    /// Declares that every coordinate of `cost_plus` (resp. `cost_minus`)
    /// carries the same value. Required by the segment-integral convention.
    pub uniform_costs: bool,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("horizon", &self.horizon)
            .field("start_t", &self.start_t)
            .field("dims", &self.dims)
            .field("action_set", &self.action_set)
            .field("fuel_mode", &self.fuel_mode)
            .field("cost_convention", &self.cost_convention)
            .field("payoff_floor", &self.payoff_floor)
            .field("exertable", &self.exertable)
            .field("uniform_costs", &self.uniform_costs)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    /// Starts a builder with every coefficient identically zero, the whole
    /// space as domain, a single zero action and infinite fuel (`p = 2`).
    pub fn builder(dims: Dims, horizon: f64) -> ProblemBuilder {
        ProblemBuilder::new(dims, horizon)
    }

    /// Rejects instances that downstream operations cannot consume.
    pub fn check_structure(&self) -> Result<()> {
        let d = self.dims.state;
        if d == 0 || self.dims.noise == 0 {
            return Err(Error::MalformedSpec(
                "state and noise dimensions must be at least 1".into(),
            ));
        }
        if !(self.start_t.is_finite() && self.horizon.is_finite() && self.start_t < self.horizon) {
            return Err(Error::MalformedSpec(format!(
                "need start_t < horizon, got {} and {}",
                self.start_t, self.horizon
            )));
        }
        if self.action_set.is_empty() {
            return Err(Error::MalformedSpec("action_set is empty".into()));
        }
        if let Some(bad) = self.action_set.iter().position(|a| a.len() != self.dims.action) {
            return Err(Error::MalformedSpec(format!(
                "action {bad} has length {}, expected {}",
                self.action_set[bad].len(),
                self.dims.action
            )));
        }
        match self.fuel_mode {
            FuelMode::Finite { zbar } if !(zbar >= 0.0 && zbar.is_finite()) => {
                return Err(Error::MalformedSpec(format!("finite fuel needs zbar >= 0, got {zbar}")));
            }
            FuelMode::Infinite { p } if !(p > 0.0) => {
                return Err(Error::MalformedSpec(format!("infinite fuel needs p > 0, got {p}")));
            }
            _ => {}
        }
        if !(self.payoff_floor >= 0.0) {
            return Err(Error::MalformedSpec(format!(
                "payoff_floor must be >= 0, got {}",
                self.payoff_floor
            )));
        }
        if self.exertable.len() != d {
            return Err(Error::MalformedSpec(format!(
                "exertable has {} entries, expected {d}",
                self.exertable.len()
            )));
        }
        if let CostConvention::SegmentIntegral { quadrature_steps } = self.cost_convention {
            if quadrature_steps == 0 {
                return Err(Error::MalformedSpec("segment integral needs quadrature_steps >= 1".into()));
            }
            if d > 1 && !self.uniform_costs {
                return Err(Error::MalformedSpec(
                    "segment-integral costs require coordinate-uniform cost_plus and cost_minus".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn zbar(&self) -> Option<f64> {
        self.fuel_mode.zbar()
    }

    pub fn action(&self, index: usize) -> &[f64] {
        &self.action_set[index]
    }

    pub fn drift_at(&self, t: f64, x: &[f64], action: usize, out: &mut [f64]) {
        (self.drift)(t, x, &self.action_set[action], out)
    }

    pub fn diffusion_at(&self, t: f64, x: &[f64], action: usize, out: &mut [f64]) {
        (self.diffusion)(t, x, &self.action_set[action], out)
    }

    pub fn running_gain_at(&self, t: f64, x: &[f64], z: f64, action: usize) -> f64 {
        (self.running_gain)(t, x, z, &self.action_set[action])
    }

    pub fn exit_gain_at(&self, t: f64, x: &[f64], z: f64) -> f64 {
        (self.exit_gain)(t, x, z)
    }

    pub fn stop_gain_at(&self, t: f64, x: &[f64], z: f64) -> f64 {
        (self.stop_gain)(t, x, z)
    }

    pub fn in_domain(&self, x: &[f64], z: f64) -> bool {
        (self.domain)(x, z)
    }
}

/// Fluent construction of [`ProblemSpec`] from closures.
pub struct ProblemBuilder {
    spec: ProblemSpec,
}

impl ProblemBuilder {
    fn new(dims: Dims, horizon: f64) -> Self {
        let l = dims.action;
        ProblemBuilder {
            spec: ProblemSpec {
                name: "unnamed".into(),
                horizon,
                start_t: 0.0,
                dims,
                drift: Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
                diffusion: Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
                running_gain: Arc::new(|_, _, _, _| 0.0),
                exit_gain: Arc::new(|_, _, _| 0.0),
                stop_gain: Arc::new(|_, _, _| 0.0),
                cost_plus: Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
                cost_minus: Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
                domain: Arc::new(|_, _| true),
                action_set: vec![vec![0.0; l]],
                fuel_mode: FuelMode::Infinite { p: 2.0 },
                cost_convention: CostConvention::Stieltjes,
                payoff_floor: 0.0,
                exertable: vec![Exertable::default(); dims.state],
                uniform_costs: false,
            },
        }
    }

    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.spec.name = name.into();
        self
    }

    pub fn start_t(mut self, t: f64) -> Self {
        self.spec.start_t = t;
        self
    }

    pub fn drift(mut self, f: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.spec.drift = Arc::new(f);
        self
    }

    pub fn diffusion(mut self, f: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.spec.diffusion = Arc::new(f);
        self
    }

    pub fn running_gain(mut self, f: impl Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.spec.running_gain = Arc::new(f);
        self
    }

    pub fn exit_gain(mut self, f: impl Fn(f64, &[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        self.spec.exit_gain = Arc::new(f);
        self
    }

    pub fn stop_gain(mut self, f: impl Fn(f64, &[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        self.spec.stop_gain = Arc::new(f);
        self
    }

    pub fn cost_plus(mut self, f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.spec.cost_plus = Arc::new(f);
        self
    }

    pub fn cost_minus(mut self, f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.spec.cost_minus = Arc::new(f);
        self
    }

    /// Constant costs; also sets the uniform-cost declaration when every
    /// entry of each vector is equal.
    pub fn constant_costs(mut self, plus: Vec<f64>, minus: Vec<f64>) -> Self {
        let uniform = |v: &[f64]| v.windows(2).all(|w| w[0] == w[1]);
        self.spec.uniform_costs = uniform(&plus) && uniform(&minus);
        self.spec.cost_plus = Arc::new(move |_, _, out: &mut [f64]| out.copy_from_slice(&plus));
        self.spec.cost_minus = Arc::new(move |_, _, out: &mut [f64]| out.copy_from_slice(&minus));
        self
    }

    pub fn uniform_costs(mut self, declared: bool) -> Self {
        self.spec.uniform_costs = declared;
        self
    }

    pub fn domain(mut self, f: impl Fn(&[f64], f64) -> bool + Send + Sync + 'static) -> Self {
        self.spec.domain = Arc::new(f);
        self
    }

    pub fn actions(mut self, actions: Vec<Vec<f64>>) -> Self {
        self.spec.action_set = actions;
        self
    }

    pub fn fuel(mut self, mode: FuelMode) -> Self {
        self.spec.fuel_mode = mode;
        self
    }

    pub fn cost_convention(mut self, c: CostConvention) -> Self {
        self.spec.cost_convention = c;
        self
    }

    pub fn payoff_floor(mut self, g: f64) -> Self {
        self.spec.payoff_floor = g;
        self
    }

    pub fn exertable(mut self, e: Vec<Exertable>) -> Self {
        self.spec.exertable = e;
        self
    }

    pub fn build(self) -> ProblemSpec {
        self.spec
    }
}
