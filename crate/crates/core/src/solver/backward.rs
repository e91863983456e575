use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lattice::{Lattice, TransitionModel};
use crate::par;
use crate::payoff::{jump_cost, CostScratch};
use crate::{Error, Result};

/// What the lattice policy does at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeDecision {
    /// Exterior node or terminal slice: the exit gain is paid.
    Exit,
    Stop,
    Continue { action: usize },
    /// Push coordinate `coord` one spacing up (`plus`) or down, staying in
    /// the same time slice.
    Exert { coord: usize, plus: bool },
}

impl NodeDecision {
    pub fn label(&self) -> String {
        match *self {
            NodeDecision::Exit => "exit".into(),
            NodeDecision::Stop => "stop".into(),
            NodeDecision::Continue { action } => format!("continue:{action}"),
            NodeDecision::Exert { coord, plus } => format!("exert:{coord}:{}", if plus { '+' } else { '-' }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Accepted residual change of the in-slice exertion fixed point when
    /// the iteration cap is hit (infinite fuel only).
    pub tol_slice: f64,
    /// Iteration cap per slice; defaults to ten times the slice size.
    pub max_iter: Option<usize>,
    /// Values within this of the best count as ties.
    pub tol_tie: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol_slice: 1e-10,
            max_iter: None,
            tol_tie: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceStats {
    pub iterations: usize,
    pub final_change: f64,
}

/// `v` on every lattice node, indexed like [`Lattice::node`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub values: Vec<f64>,
    /// Per slice `k = 0..n`.
    pub slices: Vec<SliceStats>,
    pub fingerprint: u64,
}

impl ValueField {
    pub fn at(&self, lat: &Lattice, k: usize, j: usize, s: usize) -> f64 {
        self.values[lat.node(k, j, s)]
    }

    pub fn slice<'a>(&'a self, lat: &Lattice, k: usize) -> &'a [f64] {
        let len = lat.slice_len();
        &self.values[k * len..(k + 1) * len]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyField {
    pub decisions: Vec<NodeDecision>,
    pub fingerprint: u64,
}

/// A Markov policy on lattice nodes.
pub trait LatticePolicy: Sync {
    fn decide(&self, k: usize, j: usize, s: usize) -> NodeDecision;
}

impl LatticePolicy for (&Lattice, &PolicyField) {
    fn decide(&self, k: usize, j: usize, s: usize) -> NodeDecision {
        self.1.decisions[self.0.node(k, j, s)]
    }
}

impl<F: Fn(usize, usize, usize) -> NodeDecision + Sync> LatticePolicy for F {
    fn decide(&self, k: usize, j: usize, s: usize) -> NodeDecision {
        self(k, j, s)
    }
}

/// Exertion costs of one slice, `[s][coord][dir]` with dir 0 = up.
pub(crate) struct ExertCosts {
    d: usize,
    costs: Vec<f64>,
}

impl ExertCosts {
    pub(crate) fn new(lat: &Lattice, k: usize) -> Result<Self> {
        let d = lat.dim();
        let t = lat.grid.time(k);
        let rows = par::try_map_range(lat.n_states(), |s| {
            let mut buf = CostScratch::new(d);
            let zero = vec![0.0; d];
            let mut inc = vec![0.0; d];
            let mut row = vec![f64::NAN; 2 * d];
            if lat.is_ghost(s) {
                return Ok(row);
            }
            for i in 0..d {
                inc[i] = lat.axes[i].h();
                let e = lat.spec.exertable[i];
                if e.plus {
                    row[2 * i] = jump_cost(&lat.spec, t, lat.x(s), &inc, &zero, &mut buf)?;
                }
                if e.minus {
                    row[2 * i + 1] = jump_cost(&lat.spec, t, lat.x(s), &zero, &inc, &mut buf)?;
                }
                inc[i] = 0.0;
            }
            Ok::<_, Error>(row)
        })?;
        Ok(ExertCosts {
            d,
            costs: rows.concat(),
        })
    }

    pub(crate) fn get(&self, s: usize, coord: usize, plus: bool) -> f64 {
        self.costs[s * 2 * self.d + 2 * coord + (!plus) as usize]
    }
}

fn check(v: f64, s: usize, k: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: "value",
            path: s,
            step: k,
        })
    }
}

/// `f dt + E[next]` under action `a`; `next` is the fuel-`j` row of slice `k+1`.
pub(crate) fn continuation(lat: &Lattice, tr: &TransitionModel, next: &[f64], k: usize, j: usize, s: usize, a: usize) -> f64 {
    let (ts, ps) = tr.stencil(k, s, a);
    let mut ev = 0.0;
    for (t, p) in ts.iter().zip(ps) {
        ev += p * next[*t as usize];
    }
    lat.spec.running_gain_at(lat.grid.time(k), lat.x(s), lat.z(j), a) * lat.grid.dt() + ev
}

pub(crate) fn exit_value(lat: &Lattice, k: usize, j: usize, s: usize) -> f64 {
    lat.spec.exit_gain_at(lat.grid.time(k), lat.x(s), lat.z(j))
}

pub(crate) fn stop_value(lat: &Lattice, k: usize, j: usize, s: usize) -> f64 {
    lat.spec.stop_gain_at(lat.grid.time(k), lat.x(s), lat.z(j))
}

/// `max(stop, max_a continuation)`, or the exit gain on exterior nodes.
fn base_slice(lat: &Lattice, tr: &TransitionModel, next: &[f64], k: usize) -> Result<Vec<f64>> {
    let ns = lat.n_states();
    par::try_map_range(lat.slice_len(), |js| {
        let (j, s) = (js / ns, js % ns);
        if lat.is_exterior(j, s) {
            return check(exit_value(lat, k, j, s), s, k);
        }
        let row = &next[j * ns..(j + 1) * ns];
        let mut best = stop_value(lat, k, j, s);
        for a in 0..tr.n_actions() {
            best = best.max(continuation(lat, tr, row, k, j, s, a));
        }
        check(best, s, k)
    })
}

/// Best exertion value from `(j, s)` given the slice values `cur`.
fn best_exert(lat: &Lattice, costs: &ExertCosts, cur: &[f64], j: usize, s: usize) -> f64 {
    let ns = lat.n_states();
    let mut best = f64::NEG_INFINITY;
    for i in 0..lat.dim() {
        for plus in [true, false] {
            if let Some((j2, s2)) = lat.exert_target(j, s, i, plus) {
                best = best.max(cur[j2 * ns + s2] - costs.get(s, i, plus));
            }
        }
    }
    best
}

/// Backward induction over the lattice.
///
/// Within a slice, exertion moves to a neighbouring node at the same time.
/// With finite fuel every exertion climbs one fuel level, so levels are
/// swept from the top down. With infinite fuel the slice is a longest-path
/// problem, solved by Jacobi relaxation until nothing changes.
pub fn solve_backward(lat: &Lattice, tr: &TransitionModel, opts: &SolveOptions) -> Result<ValueField> {
    let n = lat.n_steps();
    let len = lat.slice_len();
    let ns = lat.n_states();
    let mut values = vec![0.0; lat.n_nodes()];
    let terminal = par::try_map_range(len, |js| check(exit_value(lat, n, js / ns, js % ns), js % ns, n))?;
    values[n * len..].copy_from_slice(&terminal);
    let mut slices = vec![
        SliceStats {
            iterations: 0,
            final_change: 0.0
        };
        n
    ];
    let max_iter = opts.max_iter.unwrap_or(10 * len).max(1);
    for k in (0..n).rev() {
        let (head, tail) = values.split_at_mut((k + 1) * len);
        let next = &tail[..len];
        let cur = &mut head[k * len..];
        let base = base_slice(lat, tr, next, k)?;
        let costs = ExertCosts::new(lat, k)?;
        match lat.fuel {
            Some(f) => {
                cur.copy_from_slice(&base);
                for j in (0..f.levels.saturating_sub(1)).rev() {
                    let (lower, upper) = cur.split_at_mut((j + 1) * ns);
                    let row = &mut lower[j * ns..];
                    let view_upper = &*upper;
                    par::fill(row, |s| {
                        if lat.is_exterior(j, s) {
                            return base[j * ns + s];
                        }
                        let mut best = f64::NEG_INFINITY;
                        for i in 0..lat.dim() {
                            for plus in [true, false] {
                                if let Some((_, s2)) = lat.exert_target(j, s, i, plus) {
                                    best = best.max(view_upper[s2] - costs.get(s, i, plus));
                                }
                            }
                        }
                        base[j * ns + s].max(best)
                    });
                }
                slices[k].iterations = 1;
            }
            None => {
                let mut old = base.clone();
                let mut it = 0;
                loop {
                    it += 1;
                    let new = par::map_range(len, |s| {
                        if lat.is_exterior(0, s) {
                            base[s]
                        } else {
                            base[s].max(best_exert(lat, &costs, &old, 0, s))
                        }
                    });
                    let change = new
                        .iter()
                        .zip(&old)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    old = new;
                    if change == 0.0 {
                        slices[k] = SliceStats {
                            iterations: it,
                            final_change: 0.0,
                        };
                        break;
                    }
                    if !change.is_finite() {
                        return Err(Error::NonFinite {
                            what: "value",
                            path: 0,
                            step: k,
                        });
                    }
                    if it >= max_iter {
                        if change < opts.tol_slice {
                            slices[k] = SliceStats {
                                iterations: it,
                                final_change: change,
                            };
                            break;
                        }
                        return Err(Error::NonConvergent {
                            step: k,
                            iterations: it,
                            last_change: change,
                        });
                    }
                }
                cur.copy_from_slice(&old);
            }
        }
    }
    Ok(ValueField {
        values,
        slices,
        fingerprint: lat.fingerprint(),
    })
}

/// Greedy policy with respect to `field`.
///
/// Ties within `tol_tie` prefer Stop, then exertion (lowest coordinate,
/// up before down), then the lowest action index.
pub fn extract_policy(lat: &Lattice, tr: &TransitionModel, field: &ValueField, tol_tie: f64) -> Result<PolicyField> {
    let n = lat.n_steps();
    let len = lat.slice_len();
    let ns = lat.n_states();
    let mut decisions = vec![NodeDecision::Exit; lat.n_nodes()];
    for k in 0..n {
        let cur = field.slice(lat, k);
        let next = field.slice(lat, k + 1);
        let costs = ExertCosts::new(lat, k)?;
        let row = &mut decisions[k * len..(k + 1) * len];
        par::fill(row, |js| {
            let (j, s) = (js / ns, js % ns);
            if lat.is_exterior(j, s) {
                return NodeDecision::Exit;
            }
            let v = cur[js];
            let floor = v - tol_tie;
            if stop_value(lat, k, j, s) >= floor {
                return NodeDecision::Stop;
            }
            for i in 0..lat.dim() {
                for plus in [true, false] {
                    if let Some((j2, s2)) = lat.exert_target(j, s, i, plus) {
                        if cur[j2 * ns + s2] - costs.get(s, i, plus) >= floor {
                            return NodeDecision::Exert { coord: i, plus };
                        }
                    }
                }
            }
            let nrow = &next[j * ns..(j + 1) * ns];
            let mut best = (f64::NEG_INFINITY, 0);
            for a in 0..tr.n_actions() {
                let c = continuation(lat, tr, nrow, k, j, s, a);
                if c >= floor {
                    return NodeDecision::Continue { action: a };
                }
                if c > best.0 {
                    best = (c, a);
                }
            }
            NodeDecision::Continue { action: best.1 }
        });
        if lat.fuel.is_none() {
            detect_cycles(lat, k, row)?;
        }
    }
    Ok(PolicyField {
        decisions,
        fingerprint: lat.fingerprint(),
    })
}

fn detect_cycles(lat: &Lattice, k: usize, row: &[NodeDecision]) -> Result<()> {
    let ns = lat.n_states();
    // 0 unseen, 1 on the current chain, 2 known to terminate.
    let mut mark = vec![0u8; row.len()];
    let mut chain = Vec::new();
    for start in 0..row.len() {
        let mut node = start;
        loop {
            match mark[node] {
                2 => break,
                1 => {
                    return Err(Error::ExertionCycle {
                        step: k,
                        state: node % ns,
                    })
                }
                _ => {}
            }
            mark[node] = 1;
            chain.push(node);
            let NodeDecision::Exert { coord, plus } = row[node] else {
                break;
            };
            match lat.exert_target(node / ns, node % ns, coord, plus) {
                Some((j2, s2)) => node = j2 * ns + s2,
                None => break,
            }
        }
        for c in chain.drain(..) {
            mark[c] = 2;
        }
    }
    Ok(())
}

/// Exact expected payoff of a Markov lattice policy from every node.
///
/// Exertion chains inside a slice are resolved by depth-first search; a
/// chain that returns to a node it already visited is an error.
pub fn evaluate_policy(lat: &Lattice, tr: &TransitionModel, policy: &dyn LatticePolicy) -> Result<Vec<f64>> {
    let n = lat.n_steps();
    let len = lat.slice_len();
    let ns = lat.n_states();
    let mut values = vec![0.0; lat.n_nodes()];
    let terminal = par::try_map_range(len, |js| check(exit_value(lat, n, js / ns, js % ns), js % ns, n))?;
    values[n * len..].copy_from_slice(&terminal);
    for k in (0..n).rev() {
        let (head, tail) = values.split_at_mut((k + 1) * len);
        let next = &tail[..len];
        let cur = &mut head[k * len..];
        let decisions: Vec<NodeDecision> = par::map_range(len, |js| {
            let (j, s) = (js / ns, js % ns);
            if lat.is_exterior(j, s) {
                NodeDecision::Exit
            } else {
                policy.decide(k, j, s)
            }
        });
        let direct = par::try_map_range(len, |js| {
            let (j, s) = (js / ns, js % ns);
            let v = match decisions[js] {
                NodeDecision::Exit if lat.is_exterior(j, s) => exit_value(lat, k, j, s),
                NodeDecision::Exit => {
                    return Err(Error::UndefinedPolicy(format!("exit chosen at interior node (step {k}, fuel {j}, state {s})")));
                }
                NodeDecision::Stop => stop_value(lat, k, j, s),
                NodeDecision::Continue { action } if action < tr.n_actions() => {
                    continuation(lat, tr, &next[j * ns..(j + 1) * ns], k, j, s, action)
                }
                NodeDecision::Continue { action } => {
                    return Err(Error::UndefinedPolicy(format!("action {action} out of range at step {k}")));
                }
                NodeDecision::Exert { coord, plus } => {
                    if coord >= lat.dim() || lat.exert_target(j, s, coord, plus).is_none() {
                        return Err(Error::UndefinedPolicy(format!(
                            "exertion {} not available at step {k}, fuel {j}, state {s}",
                            decisions[js].label()
                        )));
                    }
                    f64::NAN
                }
            };
            Ok(v)
        })?;
        cur.copy_from_slice(&direct);
        if decisions.iter().any(|d| matches!(d, NodeDecision::Exert { .. })) {
            let costs = ExertCosts::new(lat, k)?;
            resolve_chains(lat, k, &decisions, &costs, cur)?;
        }
        for (js, v) in cur.iter().enumerate() {
            check(*v, js % ns, k)?;
        }
    }
    Ok(values)
}

fn resolve_chains(lat: &Lattice, k: usize, decisions: &[NodeDecision], costs: &ExertCosts, cur: &mut [f64]) -> Result<()> {
    let ns = lat.n_states();
    let mut state = vec![0u8; cur.len()];
    for (js, d) in decisions.iter().enumerate() {
        if !matches!(d, NodeDecision::Exert { .. }) {
            state[js] = 2;
        }
    }
    let mut chain = Vec::new();
    for start in 0..cur.len() {
        let mut node = start;
        while state[node] == 0 {
            state[node] = 1;
            chain.push(node);
            let NodeDecision::Exert { coord, plus } = decisions[node] else {
                unreachable!()
            };
            let (j2, s2) = lat
                .exert_target(node / ns, node % ns, coord, plus)
                .expect("checked when the policy was read");
            node = j2 * ns + s2;
        }
        if state[node] == 1 {
            return Err(Error::ExertionCycle {
                step: k,
                state: node % ns,
            });
        }
        let mut v = cur[node];
        while let Some(c) = chain.pop() {
            let NodeDecision::Exert { coord, plus } = decisions[c] else {
                unreachable!()
            };
            v -= costs.get(c % ns, coord, plus);
            cur[c] = v;
            state[c] = 2;
        }
    }
    Ok(())
}

/// Random Markov policy, reproducible from `seed`.
///
/// Each interior node picks uniformly among Stop, every action and every
/// available exertion. With infinite fuel each coordinate is pushed in one
/// fixed direction (drawn once per policy) so chains cannot loop.
pub fn random_policy(lat: &Lattice, seed: u64) -> PolicyField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = lat.dim();
    let signs: Vec<bool> = (0..d)
        .map(|i| {
            let e = lat.spec.exertable[i];
            match (e.plus, e.minus) {
                (true, true) => rng.random_bool(0.5),
                (p, _) => p,
            }
        })
        .collect();
    let n_actions = lat.spec.action_set.len();
    let mut decisions = vec![NodeDecision::Exit; lat.n_nodes()];
    let mut options = Vec::new();
    for k in 0..lat.n_steps() {
        for j in 0..lat.n_fuel() {
            for s in 0..lat.n_states() {
                if lat.is_exterior(j, s) {
                    continue;
                }
                options.clear();
                options.push(NodeDecision::Stop);
                options.extend((0..n_actions).map(|action| NodeDecision::Continue { action }));
                for (i, &sign) in signs.iter().enumerate() {
                    for plus in [true, false] {
                        if (lat.fuel.is_some() || plus == sign) && lat.exert_target(j, s, i, plus).is_some() {
                            options.push(NodeDecision::Exert { coord: i, plus });
                        }
                    }
                }
                decisions[lat.node(k, j, s)] = options[rng.random_range(0..options.len())];
            }
        }
    }
    PolicyField {
        decisions,
        fingerprint: lat.fingerprint(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Dims, Exertable, FuelMode, ProblemSpec};
    use crate::solver::{build_lattice, LatticeOptions};

    fn dims() -> Dims {
        Dims {
            state: 1,
            noise: 1,
            action: 1,
        }
    }

    fn opts(points: usize, n_steps: usize) -> LatticeOptions {
        LatticeOptions {
            bounds: vec![(-1.0, 1.0)],
            points: vec![points],
            n_steps,
            auto_shrink: false,
        }
    }

    #[test]
    fn stopping_only_snell_envelope() {
        // dt = h², symmetric walk, stop gain max(x, 0), nothing else.
        let spec = ProblemSpec::builder(dims(), 1.0)
            .diffusion(|_, _, _, o| o[0] = 1.0)
            .stop_gain(|_, x, _| x[0].max(0.0))
            .exit_gain(|_, x, _| x[0].max(0.0))
            .build();
        let (lat, tr) = build_lattice(&spec, &opts(9, 16)).unwrap();
        let f = solve_backward(&lat, &tr, &SolveOptions::default()).unwrap();
        for k in 0..=16 {
            for s in 0..lat.n_states() {
                let v = f.at(&lat, k, 0, s);
                assert!(v >= lat.x(s)[0].max(0.0) - 1e-15);
            }
        }
        let (s0, _) = lat.locate(&[0.0]);
        assert!(f.at(&lat, 0, 0, s0) > 0.0);
        let pol = extract_policy(&lat, &tr, &f, 1e-12).unwrap();
        let j = evaluate_policy(&lat, &tr, &(&lat, &pol)).unwrap();
        for (a, b) in j.iter().zip(&f.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_fuel_exertion_reaches_target() {
        // No noise, exit gain rewards x = 0.5, pushing up costs 0.1 per unit.
        let spec = ProblemSpec::builder(dims(), 1.0)
            .exit_gain(|_, x, _| -(x[0] - 0.5).abs())
            .stop_gain(|_, _, _| -10.0)
            .constant_costs(vec![0.1], vec![0.1])
            .fuel(FuelMode::Finite { zbar: 1.0 })
            .build();
        let (lat, tr) = build_lattice(&spec, &opts(9, 4)).unwrap();
        let f = solve_backward(&lat, &tr, &SolveOptions::default()).unwrap();
        let (s0, _) = lat.locate(&[0.0]);
        let v = f.at(&lat, 0, 0, s0);
        assert!((v - (-0.05)).abs() < 1e-12, "{v}");
        let pol = extract_policy(&lat, &tr, &f, 1e-12).unwrap();
        assert_eq!(pol.decisions[lat.node(0, 0, s0)], NodeDecision::Exert { coord: 0, plus: true });
        // Out of fuel at the top level: no exertion possible.
        let top = lat.n_fuel() - 1;
        assert!((f.at(&lat, 0, top, s0) - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn infinite_fuel_relaxation_matches_distance() {
        let spec = ProblemSpec::builder(dims(), 1.0)
            .exit_gain(|_, x, _| -(x[0] - 0.5).abs())
            .stop_gain(|_, _, _| -10.0)
            .constant_costs(vec![0.1], vec![0.2])
            .build();
        let (lat, tr) = build_lattice(&spec, &opts(9, 4)).unwrap();
        let f = solve_backward(&lat, &tr, &SolveOptions::default()).unwrap();
        for s in 1..=9 {
            let x = lat.x(s)[0];
            let want = if x < 0.5 { -0.1 * (0.5 - x) } else { -0.2 * (x - 0.5) };
            assert!((f.at(&lat, 0, 0, s) - want).abs() < 1e-12, "x={x}");
        }
        assert!(f.slices[3].iterations > 1);
        let pol = extract_policy(&lat, &tr, &f, 1e-12).unwrap();
        let j = evaluate_policy(&lat, &tr, &(&lat, &pol)).unwrap();
        for (a, b) in j.iter().zip(&f.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn random_policies_never_beat_the_value() {
        let spec = ProblemSpec::builder(dims(), 1.0)
            .diffusion(|_, _, _, o| o[0] = 0.5)
            .drift(|_, _, a, o| o[0] = a[0])
            .actions(vec![vec![-0.5], vec![0.5]])
            .running_gain(|_, x, _, a| -x[0] * x[0] - 0.1 * a[0].abs())
            .stop_gain(|_, x, _| -x[0].abs())
            .exit_gain(|_, x, _| -x[0].abs())
            .constant_costs(vec![0.3], vec![0.3])
            .build();
        let (lat, tr) = build_lattice(&spec, &opts(9, 16)).unwrap();
        let f = solve_backward(&lat, &tr, &SolveOptions::default()).unwrap();
        for seed in 0..20 {
            let p = random_policy(&lat, seed);
            let j = evaluate_policy(&lat, &tr, &(&lat, &p)).unwrap();
            for (a, b) in j.iter().zip(&f.values) {
                assert!(a <= &(b + 1e-12));
            }
        }
    }

    #[test]
    fn cyclic_policy_is_rejected() {
        let spec = ProblemSpec::builder(dims(), 1.0).build();
        let (lat, tr) = build_lattice(&spec, &opts(5, 2)).unwrap();
        let pol = |_k: usize, _j: usize, s: usize| NodeDecision::Exert {
            coord: 0,
            plus: s.is_multiple_of(2),
        };
        assert!(matches!(evaluate_policy(&lat, &tr, &pol), Err(Error::ExertionCycle { .. })));
    }

    #[test]
    fn zero_cost_ties_prefer_stop() {
        // Exertion and stopping are equally good everywhere; Stop wins.
        let spec = ProblemSpec::builder(dims(), 1.0)
            .exertable(vec![Exertable {
                plus: true,
                minus: true,
            }])
            .build();
        let (lat, tr) = build_lattice(&spec, &opts(5, 2)).unwrap();
        let f = solve_backward(&lat, &tr, &SolveOptions::default()).unwrap();
        let pol = extract_policy(&lat, &tr, &f, 1e-12).unwrap();
        let (s0, _) = lat.locate(&[0.0]);
        assert_eq!(pol.decisions[lat.node(0, 0, s0)], NodeDecision::Stop);
    }
}
