//! Dynamic programming checks on a solved lattice.

use serde::{Deserialize, Serialize};

use crate::payoff::{jump_cost, CostScratch};
use crate::solver::{random_policy, Lattice, LatticePolicy, NodeDecision, TransitionModel, ValueField};
use crate::{Error, Result};

use super::oracle::ORACLE_GUARD;

/// Intermediate time of the DPP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Horizon {
    /// Deterministic step `u`.
    Step { u: usize },
    /// First step at which the entered node is marked; `marked` is indexed
    /// like lattice nodes. The rule is checked on entry to each step, before
    /// any exertion.
    Hitting { marked: Vec<bool> },
}

impl Horizon {
    fn reached(&self, lat: &Lattice, k: usize, j: usize, s: usize) -> bool {
        match self {
            Horizon::Step { u } => k >= *u,
            Horizon::Hitting { marked } => marked[lat.node(k, j, s)],
        }
    }

    /// Hitting rule marking every node whose first coordinate is at least `level`.
    pub fn first_coordinate_above(lat: &Lattice, level: f64) -> Horizon {
        Horizon::Hitting {
            marked: (0..lat.n_nodes())
                .map(|node| {
                    let (_, _, s) = lat.split(node);
                    lat.x(s)[0] >= level
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DppMode {
    /// Supremum over every treble up to the horizon by exhaustive search.
    Exact,
    /// Best of `policies` random lattice policies; the supremum is only
    /// bounded from below, so the check is one-sided.
    Sampled { policies: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DppReport {
    pub value: f64,
    pub sup: f64,
    /// `|value - sup|` in exact mode, `value - sup` in sampled mode.
    pub residual: f64,
    pub one_sided: bool,
}

impl DppReport {
    pub fn passed(&self, tol: f64) -> bool {
        if self.one_sided {
            self.residual >= -tol
        } else {
            self.residual <= tol
        }
    }
}

fn check_field(lat: &Lattice, field: &ValueField) -> Result<()> {
    if field.fingerprint != lat.fingerprint() || field.values.len() != lat.n_nodes() {
        return Err(Error::InvalidArgument("value field was not solved on this lattice".into()));
    }
    Ok(())
}

fn push_cost(lat: &Lattice, k: usize, s: usize, coord: usize, plus: bool, buf: &mut CostScratch) -> Result<f64> {
    let d = lat.dim();
    let mut inc = vec![0.0; d];
    inc[coord] = lat.axes[coord].h();
    let zero = vec![0.0; d];
    if plus {
        jump_cost(&lat.spec, lat.grid.time(k), lat.x(s), &inc, &zero, buf)
    } else {
        jump_cost(&lat.spec, lat.grid.time(k), lat.x(s), &zero, &inc, buf)
    }
}

/// Compares `v(0, j0, s0)` with the supremum, over lattice trebles run up
/// to the horizon, of `E[N_σ + v(σ, node_σ) 1{alive at σ}]`.
pub fn check_dpp(
    lat: &Lattice,
    tr: &TransitionModel,
    field: &ValueField,
    j0: usize,
    s0: usize,
    horizon: &Horizon,
    mode: DppMode,
) -> Result<DppReport> {
    check_field(lat, field)?;
    let value = field.at(lat, 0, j0, s0);
    match mode {
        DppMode::Exact => {
            let mut work = 0;
            let mut buf = CostScratch::new(lat.dim());
            let sup = search(lat, tr, field, horizon, 0, j0, s0, true, &mut Vec::new(), &mut work, &mut buf)?;
            Ok(DppReport {
                value,
                sup,
                residual: (value - sup).abs(),
                one_sided: false,
            })
        }
        DppMode::Sampled { policies, seed } => {
            let mut sup = f64::NEG_INFINITY;
            for i in 0..policies {
                let p = random_policy(lat, seed.wrapping_add(i as u64));
                let entry = value_until(lat, tr, field, &(lat, &p), horizon)?;
                sup = sup.max(entry[lat.node(0, j0, s0)]);
            }
            Ok(DppReport {
                value,
                sup,
                residual: value - sup,
                one_sided: true,
            })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn search(
    lat: &Lattice,
    tr: &TransitionModel,
    field: &ValueField,
    horizon: &Horizon,
    k: usize,
    j: usize,
    s: usize,
    entering: bool,
    chain: &mut Vec<(usize, usize)>,
    work: &mut u64,
    buf: &mut CostScratch,
) -> Result<f64> {
    *work += 1;
    if *work > ORACLE_GUARD {
        return Err(Error::InstanceTooLarge(format!("DPP search exceeded {ORACLE_GUARD} nodes")));
    }
    let t = lat.grid.time(k);
    if k == lat.n_steps() || lat.is_exterior(j, s) {
        return Ok(lat.spec.exit_gain_at(t, lat.x(s), lat.z(j)));
    }
    if entering && horizon.reached(lat, k, j, s) {
        return Ok(field.at(lat, k, j, s));
    }
    let mut best = lat.spec.stop_gain_at(t, lat.x(s), lat.z(j));
    for a in 0..tr.n_actions() {
        let (ts, ps) = tr.stencil(k, s, a);
        let mut ev = 0.0;
        for (q, p) in ts.iter().zip(ps) {
            ev += p * search(lat, tr, field, horizon, k + 1, j, *q as usize, true, &mut Vec::new(), work, buf)?;
        }
        best = best.max(lat.spec.running_gain_at(t, lat.x(s), lat.z(j), a) * lat.grid.dt() + ev);
    }
    chain.push((j, s));
    for coord in 0..lat.dim() {
        for plus in [true, false] {
            if let Some((j2, s2)) = lat.exert_target(j, s, coord, plus) {
                if chain.contains(&(j2, s2)) {
                    continue;
                }
                let c = push_cost(lat, k, s, coord, plus, buf)?;
                best = best.max(search(lat, tr, field, horizon, k, j2, s2, false, chain, work, buf)? - c);
            }
        }
    }
    chain.pop();
    Ok(best)
}

/// Entry values of following `policy` until the horizon is reached and
/// collecting `v` there: `E[N_σ + v(σ, node_σ) 1{alive at σ}]` from every node.
pub fn value_until(
    lat: &Lattice,
    tr: &TransitionModel,
    field: &ValueField,
    policy: &dyn LatticePolicy,
    horizon: &Horizon,
) -> Result<Vec<f64>> {
    let n = lat.n_steps();
    let ns = lat.n_states();
    let width = lat.slice_len();
    let mut entry = vec![0.0; lat.n_nodes()];
    let mut buf = CostScratch::new(lat.dim());
    for k in (0..=n).rev() {
        if let Horizon::Step { u } = horizon {
            if k >= *u {
                let r = k * width..(k + 1) * width;
                entry[r.clone()].copy_from_slice(&field.values[r]);
                continue;
            }
        }
        let t = lat.grid.time(k);
        // Value after entry, following the policy (before the horizon test).
        let mut follow = vec![f64::NAN; width];
        let mut state = vec![0u8; width];
        for js0 in 0..width {
            let mut stack = Vec::new();
            let mut js = js0;
            let mut resolved;
            loop {
                if state[js] == 2 {
                    resolved = follow[js];
                    break;
                }
                if state[js] == 1 {
                    return Err(Error::ExertionCycle { step: k, state: js % ns });
                }
                let (j, s) = (js / ns, js % ns);
                if k == n || lat.is_exterior(j, s) {
                    follow[js] = lat.spec.exit_gain_at(t, lat.x(s), lat.z(j));
                    state[js] = 2;
                    continue;
                }
                match policy.decide(k, j, s) {
                    NodeDecision::Stop => {
                        follow[js] = lat.spec.stop_gain_at(t, lat.x(s), lat.z(j));
                        state[js] = 2;
                    }
                    NodeDecision::Continue { action } => {
                        if action >= tr.n_actions() {
                            return Err(Error::UndefinedPolicy(format!("action {action} out of range")));
                        }
                        let (ts, ps) = tr.stencil(k, s, action);
                        let mut ev = 0.0;
                        for (q, p) in ts.iter().zip(ps) {
                            ev += p * entry[lat.node(k + 1, j, *q as usize)];
                        }
                        follow[js] = lat.spec.running_gain_at(t, lat.x(s), lat.z(j), action) * lat.grid.dt() + ev;
                        state[js] = 2;
                    }
                    NodeDecision::Exert { coord, plus } => {
                        let Some((j2, s2)) = lat.exert_target(j, s, coord, plus) else {
                            return Err(Error::UndefinedPolicy(format!(
                                "exertion not available at step {k}, fuel {j}, state {s}"
                            )));
                        };
                        state[js] = 1;
                        stack.push((js, push_cost(lat, k, s, coord, plus, &mut buf)?));
                        js = j2 * ns + s2;
                    }
                    NodeDecision::Exit => {
                        return Err(Error::UndefinedPolicy(format!("exit chosen at interior node, step {k}")));
                    }
                }
            }
            while let Some((node, c)) = stack.pop() {
                resolved -= c;
                follow[node] = resolved;
                state[node] = 2;
            }
        }
        for js in 0..width {
            let (j, s) = (js / ns, js % ns);
            let node = lat.node(k, j, s);
            entry[node] = if k < n && !lat.is_exterior(j, s) && horizon.reached(lat, k, j, s) {
                field.values[node]
            } else {
                follow[js]
            };
        }
    }
    Ok(entry)
}

/// Largest one-step DPP residual over interior nodes, with the node where
/// it occurs. Every branch is recomputed here from the model.
pub fn one_step_residuals(lat: &Lattice, tr: &TransitionModel, field: &ValueField) -> Result<(f64, usize)> {
    check_field(lat, field)?;
    let dt = lat.grid.dt();
    let mut buf = CostScratch::new(lat.dim());
    let mut worst = (0.0, 0);
    for node in 0..lat.n_nodes() {
        let (k, j, s) = lat.split(node);
        let t = lat.grid.time(k);
        let x = lat.x(s);
        let z = lat.z(j);
        let want = if k == lat.n_steps() || lat.is_exterior(j, s) {
            lat.spec.exit_gain_at(t, x, z)
        } else {
            let mut best = lat.spec.stop_gain_at(t, x, z);
            for a in 0..tr.n_actions() {
                let (ts, ps) = tr.stencil(k, s, a);
                let ev: f64 = ts
                    .iter()
                    .zip(ps)
                    .map(|(q, p)| p * field.values[lat.node(k + 1, j, *q as usize)])
                    .sum();
                best = best.max(dt * lat.spec.running_gain_at(t, x, z, a) + ev);
            }
            for coord in 0..lat.dim() {
                for plus in [true, false] {
                    if let Some((j2, s2)) = lat.exert_target(j, s, coord, plus) {
                        let c = push_cost(lat, k, s, coord, plus, &mut buf)?;
                        best = best.max(field.values[lat.node(k, j2, s2)] - c);
                    }
                }
            }
            best
        };
        let r = (field.values[node] - want).abs();
        if !(r <= worst.0) {
            worst = (r, node);
        }
    }
    Ok(worst)
}
