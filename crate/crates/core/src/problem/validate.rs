use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CostConvention, ProblemSpec};
use crate::stats::{radical_inverse, PRIMES};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
    pub sampled_points: usize,
    /// Headline statistic of the check, when it has one.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn get(&self, name: &str) -> Option<&ValidationCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }
}

/// Box of states the probes sample from. Time always spans
/// `[start_t, horizon]` and fuel `[0, zbar]` (or `[0, 1]` with infinite fuel).
#[derive(Debug, Clone)]
pub struct ProbeRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ProbeRegion {
    pub fn unit_box(d: usize) -> Self {
        ProbeRegion {
            lo: vec![-1.0; d],
            hi: vec![1.0; d],
        }
    }
}

/// Names of the checks, in report order.
pub const CHECK_NAMES: [&str; 7] = [
    "structure",
    "finite_coefficients",
    "payoff_floor.exit_gain",
    "payoff_floor.stop_gain",
    "lipschitz.drift",
    "lipschitz.diffusion",
    "segment_costs.uniform",
];

const LIPSCHITZ_CEILING: f64 = 1e6;
/// Each sampled pair is also walked in 8 and 512 equal sub-steps; a ratio
/// that keeps growing under refinement is the signature of a non-Lipschitz
/// point (kinks like `sqrt|x|`, jumps).
const SUBDIVISIONS: [usize; 3] = [1, 8, 512];
const GROWTH_LIMIT: f64 = 3.0;

struct Sample {
    t: f64,
    x: Vec<f64>,
    z: f64,
}

/// Probes a problem on `samples` shifted-Halton points of `[-1, 1]^d`.
pub fn validate_problem(spec: &ProblemSpec, samples: usize, seed: u64) -> Result<ValidationReport> {
    validate_problem_in(spec, samples, seed, &ProbeRegion::unit_box(spec.dims.state))
}

pub fn validate_problem_in(
    spec: &ProblemSpec,
    samples: usize,
    seed: u64,
    region: &ProbeRegion,
) -> Result<ValidationReport> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be >= 1".into()));
    }
    spec.check_structure()?;
    let d = spec.dims.state;
    if region.lo.len() != d || region.hi.len() != d {
        return Err(Error::InvalidArgument("probe region dimension mismatch".into()));
    }
    let points = sample_points(spec, samples, seed, region);

    let mut checks = vec![ValidationCheck {
        name: CHECK_NAMES[0].into(),
        status: CheckStatus::Pass,
        detail: format!(
            "d={}, d'={}, l={}, {} actions",
            d,
            spec.dims.noise,
            spec.dims.action,
            spec.action_set.len()
        ),
        sampled_points: 0,
        value: None,
    }];

    checks.push(finite_check(spec, &points));
    checks.push(floor_check(CHECK_NAMES[2], &points, spec.payoff_floor, |s| {
        spec.exit_gain_at(s.t, &s.x, s.z)
    }));
    checks.push(floor_check(CHECK_NAMES[3], &points, spec.payoff_floor, |s| {
        spec.stop_gain_at(s.t, &s.x, s.z)
    }));

    let mut buf_a = vec![0.0; d];
    let mut buf_b = vec![0.0; d];
    checks.push(lipschitz_check(CHECK_NAMES[4], spec, &points, |t, x, a, out: &mut Vec<f64>| {
        out.resize(d, 0.0);
        spec.drift_at(t, x, a, out);
    }));
    let dd = d * spec.dims.noise;
    checks.push(lipschitz_check(CHECK_NAMES[5], spec, &points, |t, x, a, out: &mut Vec<f64>| {
        out.resize(dd, 0.0);
        spec.diffusion_at(t, x, a, out);
    }));

    match spec.cost_convention {
        CostConvention::SegmentIntegral { .. } => {
            for s in &points {
                (spec.cost_plus)(s.t, &s.x, &mut buf_a);
                (spec.cost_minus)(s.t, &s.x, &mut buf_b);
                if !is_uniform(&buf_a) || !is_uniform(&buf_b) {
                    return Err(Error::MalformedSpec(format!(
                        "segment-integral costs are not coordinate-uniform at t={}, x={:?}",
                        s.t, s.x
                    )));
                }
            }
            checks.push(ValidationCheck {
                name: CHECK_NAMES[6].into(),
                status: CheckStatus::Pass,
                detail: "costs equal across coordinates at every sample".into(),
                sampled_points: points.len(),
                value: None,
            });
        }
        CostConvention::Stieltjes => checks.push(ValidationCheck {
            name: CHECK_NAMES[6].into(),
            status: CheckStatus::Pass,
            detail: "not applicable (Stieltjes convention)".into(),
            sampled_points: 0,
            value: None,
        }),
    }

    Ok(ValidationReport { checks })
}

pub(crate) fn is_uniform(v: &[f64]) -> bool {
    v.windows(2)
        .all(|w| (w[0] - w[1]).abs() <= 1e-12 * w[0].abs().max(w[1].abs()).max(1.0))
}

fn sample_points(spec: &ProblemSpec, samples: usize, seed: u64, region: &ProbeRegion) -> Vec<Sample> {
    let d = spec.dims.state;
    let dim = d + 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let z_hi = spec.zbar().unwrap_or(1.0);
    (0..samples)
        .map(|i| {
            let u: Vec<f64> = (0..dim)
                .map(|j| {
                    let base = PRIMES[j % PRIMES.len()];
                    (radical_inverse(i as u64 + 1, base) + shift[j]).fract()
                })
                .collect();
            Sample {
                t: spec.start_t + u[0] * (spec.horizon - spec.start_t),
                x: (0..d)
                    .map(|k| region.lo[k] + u[k + 1] * (region.hi[k] - region.lo[k]))
                    .collect(),
                z: u[d + 1] * z_hi,
            }
        })
        .collect()
}

fn finite_check(spec: &ProblemSpec, points: &[Sample]) -> ValidationCheck {
    let d = spec.dims.state;
    let mut mu = vec![0.0; d];
    let mut sig = vec![0.0; d * spec.dims.noise];
    let mut cp = vec![0.0; d];
    let mut cm = vec![0.0; d];
    let mut bad = 0usize;
    for s in points {
        let mut ok = spec.exit_gain_at(s.t, &s.x, s.z).is_finite() && spec.stop_gain_at(s.t, &s.x, s.z).is_finite();
        (spec.cost_plus)(s.t, &s.x, &mut cp);
        (spec.cost_minus)(s.t, &s.x, &mut cm);
        ok &= cp.iter().chain(cm.iter()).all(|v| v.is_finite());
        for a in 0..spec.action_set.len() {
            spec.drift_at(s.t, &s.x, a, &mut mu);
            spec.diffusion_at(s.t, &s.x, a, &mut sig);
            ok &= mu.iter().chain(sig.iter()).all(|v| v.is_finite());
            ok &= spec.running_gain_at(s.t, &s.x, s.z, a).is_finite();
        }
        if !ok {
            bad += 1;
        }
    }
    ValidationCheck {
        name: CHECK_NAMES[1].into(),
        status: if bad == 0 { CheckStatus::Pass } else { CheckStatus::Fail },
        detail: format!("{bad} of {} samples produced non-finite values", points.len()),
        sampled_points: points.len(),
        value: Some(bad as f64),
    }
}

fn floor_check(name: &str, points: &[Sample], floor: f64, g: impl Fn(&Sample) -> f64) -> ValidationCheck {
    let mut violations = 0usize;
    let mut worst = f64::INFINITY;
    for s in points {
        let v = g(s);
        worst = worst.min(v);
        if !(v >= -floor) {
            violations += 1;
        }
    }
    ValidationCheck {
        name: name.into(),
        status: if violations == 0 { CheckStatus::Pass } else { CheckStatus::Fail },
        detail: format!(
            "{violations} of {} samples below -{floor} (minimum {worst})",
            points.len()
        ),
        sampled_points: points.len(),
        value: Some(violations as f64),
    }
}

fn lipschitz_check(
    name: &str,
    spec: &ProblemSpec,
    points: &[Sample],
    mut eval: impl FnMut(f64, &[f64], usize, &mut Vec<f64>),
) -> ValidationCheck {
    let mut fa = Vec::new();
    let mut fb = Vec::new();
    let mut y = Vec::new();
    let mut far_max: f64 = 0.0;
    let mut fine_max: f64 = 0.0;
    let mut growth: f64 = 1.0;
    let mut non_finite = false;
    let mut pairs = 0usize;
    for w in points.windows(2) {
        let (p, q) = (&w[0], &w[1]);
        let dist = norm_diff(&p.x, &q.x);
        if dist == 0.0 {
            continue;
        }
        for a in 0..spec.action_set.len() {
            let mut ratios = [0.0f64; 3];
            for (slot, &parts) in SUBDIVISIONS.iter().enumerate() {
                let step = dist / parts as f64;
                eval(p.t, &p.x, a, &mut fa);
                for i in 1..=parts {
                    let s = i as f64 / parts as f64;
                    y.clear();
                    y.extend(p.x.iter().zip(&q.x).map(|(u, v)| u + s * (v - u)));
                    eval(p.t, &y, a, &mut fb);
                    let r = norm_diff(&fa, &fb) / step;
                    if r.is_finite() {
                        ratios[slot] = ratios[slot].max(r);
                    } else {
                        non_finite = true;
                    }
                    std::mem::swap(&mut fa, &mut fb);
                }
            }
            far_max = far_max.max(ratios[0]);
            fine_max = fine_max.max(ratios[2]);
            if ratios[1] > 0.0 {
                growth = growth.max(ratios[2] / ratios[1]);
            } else if ratios[2] > 0.0 {
                growth = f64::INFINITY;
            }
            pairs += 1;
        }
    }
    let ratio = far_max.max(fine_max);
    let suspicious = non_finite || ratio > LIPSCHITZ_CEILING || growth > GROWTH_LIMIT;
    ValidationCheck {
        name: name.into(),
        status: if suspicious { CheckStatus::Warn } else { CheckStatus::Pass },
        detail: format!(
            "max difference ratio {ratio:.6} over {pairs} pairs; refinement growth {growth:.3}{}",
            if suspicious { " (looks unbounded)" } else { "" }
        ),
        sampled_points: points.len(),
        value: Some(ratio),
    }
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
