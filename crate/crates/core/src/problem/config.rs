//! JSON problem files built from a small library of named parametric forms.
//!
//! Every coefficient is an object tagged by `"type"`. See
//! `docs/config.schema.json` for the full schema.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{CostConvention, Dims, Exertable, FuelMode, ProblemSpec};
use crate::{Error, Result};

type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub horizon: f64,
    #[serde(default)]
    pub start_t: f64,
    pub dims: Dims,
    #[serde(default)]
    pub drift: DriftForm,
    #[serde(default)]
    pub diffusion: DiffusionForm,
    #[serde(default)]
    pub running_gain: GainForm,
    #[serde(default)]
    pub exit_gain: GainForm,
    #[serde(default)]
    pub stop_gain: GainForm,
    #[serde(default)]
    pub cost_plus: CostForm,
    #[serde(default)]
    pub cost_minus: CostForm,
    #[serde(default)]
    pub domain: DomainForm,
    pub action_set: Matrix,
    pub fuel: FuelMode,
    #[serde(default = "default_convention")]
    pub cost_convention: CostConvention,
    #[serde(default)]
    pub payoff_floor: f64,
    #[serde(default)]
    pub exertable: Option<Vec<Exertable>>,
}

fn default_name() -> String {
    "unnamed".into()
}

fn default_convention() -> CostConvention {
    CostConvention::Stieltjes
}

/// `μ(t, x, a)`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftForm {
    #[default]
    Zero,
    Constant { value: Vec<f64> },
    /// `offset + state_matrix · x + action_matrix · a`.
    Affine {
        offset: Vec<f64>,
        #[serde(default)]
        state_matrix: Option<Matrix>,
        #[serde(default)]
        action_matrix: Option<Matrix>,
    },
}

/// `σ(t, x, a)`, a `d × d'` matrix.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionForm {
    #[default]
    Zero,
    Constant { value: Matrix },
    /// `offset + Σ_k slopes[k] · x_k`, each `slopes[k]` a `d × d'` matrix.
    Affine { offset: Matrix, slopes: Vec<Matrix> },
}

/// Monomial `coef · t^t · Π x_i^x[i] · z^z · Π a_j^a[j]`. Missing exponent
/// lists mean all zeros.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coef: f64,
    #[serde(default)]
    pub t: u32,
    #[serde(default)]
    pub x: Vec<u32>,
    #[serde(default)]
    pub z: u32,
    #[serde(default)]
    pub a: Vec<u32>,
}

/// Gains `f(t, x, z, a)`, `g1(t, x, z)` and `g2(t, x, z)`. The terminal
/// gains must not depend on `a`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainForm {
    #[default]
    Zero,
    Constant { value: f64 },
    Polynomial { terms: Vec<Monomial> },
    /// `scale · max(0, weights · x + offset)`.
    Hinge {
        weights: Vec<f64>,
        #[serde(default)]
        offset: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Sum { parts: Vec<GainForm> },
}

fn one() -> f64 {
    1.0
}

/// Per-coordinate unit costs `c(t, x)`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostForm {
    #[default]
    Zero,
    Constant { value: Vec<f64> },
    /// `offset + slopes · x`.
    Affine { offset: Vec<f64>, slopes: Matrix },
}

/// Open domain for `x`; the fuel coordinate is unrestricted.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainForm {
    #[default]
    Everything,
    /// `lo_i < x_i < hi_i`; `null` bounds are infinite.
    Box {
        lo: Vec<Option<f64>>,
        hi: Vec<Option<f64>>,
    },
    /// `normal · x < offset`.
    HalfSpace { normal: Vec<f64>, offset: f64 },
    /// `|x - center| < radius`.
    Ball { center: Vec<f64>, radius: f64 },
}

/// Parses a problem from JSON text. Schema errors carry line and column.
pub fn parse_problem(text: &str) -> Result<ProblemSpec> {
    let cfg: ProblemConfig =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("problem config: {e}")))?;
    cfg.build()
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<ProblemSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_problem(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn dim_err(field: &str, got: usize, want: usize) -> Error {
    Error::Config(format!("{field}: expected length {want}, got {got}"))
}

fn check_len<T>(field: &str, v: &[T], want: usize) -> Result<()> {
    if v.len() == want {
        Ok(())
    } else {
        Err(dim_err(field, v.len(), want))
    }
}

fn check_matrix(field: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    check_len(field, m, rows)?;
    for (i, r) in m.iter().enumerate() {
        check_len(&format!("{field}[{i}]"), r, cols)?;
    }
    Ok(())
}

fn flatten(m: &Matrix) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

impl ProblemConfig {
    pub fn build(&self) -> Result<ProblemSpec> {
        let dims = self.dims;
        let (d, dp, l) = (dims.state, dims.noise, dims.action);
        let mut b = ProblemSpec::builder(dims, self.horizon)
            .name(self.name.clone())
            .start_t(self.start_t)
            .actions(self.action_set.clone())
            .fuel(self.fuel)
            .cost_convention(self.cost_convention)
            .payoff_floor(self.payoff_floor);
        if let Some(e) = &self.exertable {
            b = b.exertable(e.clone());
        }

        b = match &self.drift {
            DriftForm::Zero => b,
            DriftForm::Constant { value } => {
                check_len("drift.value", value, d)?;
                let v = value.clone();
                b.drift(move |_, _, _, out| out.copy_from_slice(&v))
            }
            DriftForm::Affine {
                offset,
                state_matrix,
                action_matrix,
            } => {
                check_len("drift.offset", offset, d)?;
                let sm = match state_matrix {
                    Some(m) => {
                        check_matrix("drift.state_matrix", m, d, d)?;
                        flatten(m)
                    }
                    None => vec![0.0; d * d],
                };
                let am = match action_matrix {
                    Some(m) => {
                        check_matrix("drift.action_matrix", m, d, l)?;
                        flatten(m)
                    }
                    None => vec![0.0; d * l],
                };
                let off = offset.clone();
                b.drift(move |_, x, a, out| {
                    for i in 0..d {
                        let mut s = off[i];
                        for k in 0..d {
                            s += sm[i * d + k] * x[k];
                        }
                        for k in 0..l {
                            s += am[i * l + k] * a[k];
                        }
                        out[i] = s;
                    }
                })
            }
        };

        b = match &self.diffusion {
            DiffusionForm::Zero => b,
            DiffusionForm::Constant { value } => {
                check_matrix("diffusion.value", value, d, dp)?;
                let v = flatten(value);
                b.diffusion(move |_, _, _, out| out.copy_from_slice(&v))
            }
            DiffusionForm::Affine { offset, slopes } => {
                check_matrix("diffusion.offset", offset, d, dp)?;
                check_len("diffusion.slopes", slopes, d)?;
                for (k, m) in slopes.iter().enumerate() {
                    check_matrix(&format!("diffusion.slopes[{k}]"), m, d, dp)?;
                }
                let off = flatten(offset);
                let sl: Vec<Vec<f64>> = slopes.iter().map(flatten).collect();
                b.diffusion(move |_, x, _, out| {
                    out.copy_from_slice(&off);
                    for (k, m) in sl.iter().enumerate() {
                        for (o, s) in out.iter_mut().zip(m) {
                            *o += s * x[k];
                        }
                    }
                })
            }
        };

        let f = compile_gain("running_gain", &self.running_gain, d, l, true)?;
        b = b.running_gain(move |t, x, z, a| f(t, x, z, a));
        let g1 = compile_gain("exit_gain", &self.exit_gain, d, l, false)?;
        b = b.exit_gain(move |t, x, z| g1(t, x, z, &[]));
        let g2 = compile_gain("stop_gain", &self.stop_gain, d, l, false)?;
        b = b.stop_gain(move |t, x, z| g2(t, x, z, &[]));

        let (cp, up) = compile_cost("cost_plus", &self.cost_plus, d)?;
        let (cm, um) = compile_cost("cost_minus", &self.cost_minus, d)?;
        b = b
            .cost_plus(move |t, x, out| cp(t, x, out))
            .cost_minus(move |t, x, out| cm(t, x, out))
            .uniform_costs(up && um);

        b = match &self.domain {
            DomainForm::Everything => b,
            DomainForm::Box { lo, hi } => {
                check_len("domain.lo", lo, d)?;
                check_len("domain.hi", hi, d)?;
                let lo: Vec<f64> = lo.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect();
                let hi: Vec<f64> = hi.iter().map(|v| v.unwrap_or(f64::INFINITY)).collect();
                b.domain(move |x, _| (0..x.len()).all(|i| lo[i] < x[i] && x[i] < hi[i]))
            }
            DomainForm::HalfSpace { normal, offset } => {
                check_len("domain.normal", normal, d)?;
                let n = normal.clone();
                let c = *offset;
                b.domain(move |x, _| n.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() < c)
            }
            DomainForm::Ball { center, radius } => {
                check_len("domain.center", center, d)?;
                let c = center.clone();
                let r2 = radius * radius;
                b.domain(move |x, _| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() < r2)
            }
        };

        let spec = b.build();
        spec.check_structure()?;
        Ok(spec)
    }
}

type CompiledGain = Arc<dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync>;
type CompiledCost = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

fn compile_gain(field: &str, g: &GainForm, d: usize, l: usize, allow_action: bool) -> Result<CompiledGain> {
    Ok(match g {
        GainForm::Zero => Arc::new(|_, _, _, _| 0.0),
        GainForm::Constant { value } => {
            let v = *value;
            Arc::new(move |_, _, _, _| v)
        }
        GainForm::Polynomial { terms } => {
            let mut ts = Vec::with_capacity(terms.len());
            for (i, m) in terms.iter().enumerate() {
                let mut m = m.clone();
                if m.x.is_empty() {
                    m.x = vec![0; d];
                }
                check_len(&format!("{field}.terms[{i}].x"), &m.x, d)?;
                if !m.a.is_empty() {
                    if !allow_action && m.a.iter().any(|&e| e != 0) {
                        return Err(Error::Config(format!(
                            "{field}.terms[{i}].a: terminal gains cannot depend on the action"
                        )));
                    }
                    check_len(&format!("{field}.terms[{i}].a"), &m.a, l)?;
                }
                ts.push(m);
            }
            Arc::new(move |t, x, z, a| {
                ts.iter()
                    .map(|m| {
                        let mut v = m.coef * t.powi(m.t as i32) * z.powi(m.z as i32);
                        for (xi, &e) in x.iter().zip(&m.x) {
                            v *= xi.powi(e as i32);
                        }
                        for (ai, &e) in a.iter().zip(&m.a) {
                            v *= ai.powi(e as i32);
                        }
                        v
                    })
                    .sum()
            })
        }
        GainForm::Hinge { weights, offset, scale } => {
            check_len(&format!("{field}.weights"), weights, d)?;
            let w = weights.clone();
            let (c, s) = (*offset, *scale);
            Arc::new(move |_, x, _, _| s * (w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + c).max(0.0))
        }
        GainForm::Sum { parts } => {
            let fs = parts
                .iter()
                .enumerate()
                .map(|(i, p)| compile_gain(&format!("{field}.parts[{i}]"), p, d, l, allow_action))
                .collect::<Result<Vec<_>>>()?;
            Arc::new(move |t, x, z, a| fs.iter().map(|f| f(t, x, z, a)).sum())
        }
    })
}

fn compile_cost(field: &str, c: &CostForm, d: usize) -> Result<(CompiledCost, bool)> {
    Ok(match c {
        CostForm::Zero => (Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)), true),
        CostForm::Constant { value } => {
            check_len(&format!("{field}.value"), value, d)?;
            let v = value.clone();
            let uniform = v.windows(2).all(|w| w[0] == w[1]);
            (Arc::new(move |_, _, out: &mut [f64]| out.copy_from_slice(&v)), uniform)
        }
        CostForm::Affine { offset, slopes } => {
            check_len(&format!("{field}.offset"), offset, d)?;
            check_matrix(&format!("{field}.slopes"), slopes, d, d)?;
            let uniform = offset.windows(2).all(|w| w[0] == w[1]) && slopes.windows(2).all(|w| w[0] == w[1]);
            let off = offset.clone();
            let sl = flatten(slopes);
            (
                Arc::new(move |_, x: &[f64], out: &mut [f64]| {
                    for i in 0..d {
                        out[i] = off[i] + (0..d).map(|k| sl[i * d + k] * x[k]).sum::<f64>();
                    }
                }),
                uniform,
            )
        }
    })
}
