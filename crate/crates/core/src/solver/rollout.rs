use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::backward::{exit_value, stop_value, ExertCosts, LatticePolicy, NodeDecision, ValueField};
use super::lattice::{Lattice, TransitionModel};
use crate::par;
use crate::stats::normal_cdf;
use crate::{Error, Result};

/// A lattice policy allowed to look at the nodes entered since the
/// rollout started.
pub trait ChainPolicy: Sync {
    /// `entries[i]` is the `(fuel, state)` node entered at step `start + i`;
    /// the last entry is the current node before any exertion.
    fn decide(&self, k: usize, j: usize, s: usize, entries: &[(usize, usize)]) -> NodeDecision;
}

/// Adapts a Markov policy.
pub struct Markov<P>(pub P);

impl<P: LatticePolicy> ChainPolicy for Markov<P> {
    fn decide(&self, k: usize, j: usize, s: usize, _: &[(usize, usize)]) -> NodeDecision {
        self.0.decide(k, j, s)
    }
}

/// One realisation of the controlled chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPath {
    pub start: usize,
    /// Node entered at each step `start..=end`.
    pub entries: Vec<(usize, usize)>,
    /// Running gain minus exertion cost booked at each step `start..=end`.
    pub flows: Vec<f64>,
    /// Exertion moves made at each step `start..=end`.
    pub exertions: Vec<u32>,
    /// Step at which the path stopped or exited.
    pub end: usize,
    /// Stop or exit gain paid at `end`.
    pub terminal: f64,
    pub stopped: bool,
}

impl ChainPath {
    /// `N_u`: flows over `[start, u)` plus the terminal gain once `end < u`.
    pub fn n_at(&self, u: usize) -> f64 {
        let upto = u.min(self.end + 1).saturating_sub(self.start);
        let mut acc: f64 = self.flows[..upto.min(self.flows.len())].iter().sum();
        if self.end < u {
            acc += self.terminal;
        }
        acc
    }

    /// `M_u = N_u + v(u, node_u) 1{end >= u}`.
    pub fn m_at(&self, u: usize, lat: &Lattice, field: &ValueField) -> f64 {
        let mut m = self.n_at(u);
        if u <= self.end {
            let (j, s) = self.entries[u - self.start];
            m += field.at(lat, u, j, s);
        }
        m
    }

    pub fn payoff(&self) -> f64 {
        self.flows.iter().sum::<f64>() + self.terminal
    }

    /// Exertion moves at steps `>= from`.
    pub fn exertions_from(&self, from: usize) -> u32 {
        self.exertions[from.saturating_sub(self.start).min(self.exertions.len())..]
            .iter()
            .sum()
    }
}

/// Simulates `n_paths` chain paths from node `(k0, j0, s0)`.
///
/// Path `i` draws its transitions from ChaCha8 stream `i` of `seed`: each
/// step takes a standard normal `g` and picks the stencil entry whose
/// cumulative probability first exceeds `Φ(g)`.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    lat: &Lattice,
    tr: &TransitionModel,
    policy: &dyn ChainPolicy,
    k0: usize,
    j0: usize,
    s0: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<ChainPath>> {
    let n = lat.n_steps();
    if k0 > n || j0 >= lat.n_fuel() || s0 >= lat.n_states() {
        return Err(Error::InvalidArgument(format!("start node ({k0}, {j0}, {s0}) is not on the lattice")));
    }
    let costs = (k0..n).map(|k| ExertCosts::new(lat, k)).collect::<Result<Vec<_>>>()?;
    par::try_map_range(n_paths, |pi| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(pi as u64);
        let mut p = ChainPath {
            start: k0,
            entries: Vec::new(),
            flows: Vec::new(),
            exertions: Vec::new(),
            end: n,
            terminal: 0.0,
            stopped: false,
        };
        let (mut j, mut s) = (j0, s0);
        for k in k0..=n {
            p.entries.push((j, s));
            p.flows.push(0.0);
            p.exertions.push(0);
            if k == n || lat.is_exterior(j, s) {
                p.end = k;
                p.terminal = exit_value(lat, k, j, s);
                break;
            }
            let cost = &costs[k - k0];
            let mut moves = 0;
            let decision = loop {
                match policy.decide(k, j, s, &p.entries) {
                    NodeDecision::Exert { coord, plus } => {
                        let Some((j2, s2)) = lat.exert_target(j, s, coord, plus) else {
                            return Err(Error::UndefinedPolicy(format!(
                                "exertion not available at step {k}, fuel {j}, state {s}"
                            )));
                        };
                        *p.flows.last_mut().unwrap() -= cost.get(s, coord, plus);
                        *p.exertions.last_mut().unwrap() += 1;
                        (j, s) = (j2, s2);
                        moves += 1;
                        if moves > lat.slice_len() {
                            return Err(Error::ExertionCycle { step: k, state: s });
                        }
                        if lat.is_exterior(j, s) {
                            break NodeDecision::Exit;
                        }
                    }
                    d => break d,
                }
            };
            match decision {
                NodeDecision::Exit if lat.is_exterior(j, s) => {
                    p.end = k;
                    p.terminal = exit_value(lat, k, j, s);
                    break;
                }
                NodeDecision::Exit => {
                    return Err(Error::UndefinedPolicy(format!("exit chosen at interior node, step {k}")));
                }
                NodeDecision::Stop => {
                    p.end = k;
                    p.terminal = stop_value(lat, k, j, s);
                    p.stopped = true;
                    break;
                }
                NodeDecision::Continue { action } => {
                    if action >= tr.n_actions() {
                        return Err(Error::UndefinedPolicy(format!("action {action} out of range")));
                    }
                    *p.flows.last_mut().unwrap() +=
                        lat.spec.running_gain_at(lat.grid.time(k), lat.x(s), lat.z(j), action) * lat.grid.dt();
                    let (ts, ps) = tr.stencil(k, s, action);
                    let g: f64 = StandardNormal.sample(&mut rng);
                    let u = normal_cdf(g);
                    let mut acc = 0.0;
                    let mut next = ts[ts.len() - 1];
                    for (t, q) in ts.iter().zip(ps) {
                        acc += q;
                        if u < acc {
                            next = *t;
                            break;
                        }
                    }
                    s = next as usize;
                }
                NodeDecision::Exert { .. } => unreachable!(),
            }
        }
        Ok(p)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Dims, FuelMode, ProblemSpec};
    use crate::solver::{evaluate_policy, random_policy, solve, LatticeOptions, SolveOptions};
    use crate::stats::Estimate;

    fn spec() -> ProblemSpec {
        ProblemSpec::builder(
            Dims {
                state: 1,
                noise: 1,
                action: 1,
            },
            1.0,
        )
        .diffusion(|_, _, _, o| o[0] = 0.6)
        .drift(|_, _, a, o| o[0] = a[0])
        .actions(vec![vec![-0.3], vec![0.3]])
        .running_gain(|_, x, _, _| -x[0].abs())
        .stop_gain(|_, x, _| 0.2 - x[0] * x[0])
        .exit_gain(|_, x, _| -x[0].abs())
        .constant_costs(vec![0.2], vec![0.2])
        .fuel(FuelMode::Finite { zbar: 0.5 })
        .build()
    }

    #[test]
    fn chain_mean_matches_exact_evaluation() {
        let opts = LatticeOptions {
            bounds: vec![(-1.0, 1.0)],
            points: vec![9],
            n_steps: 12,
            auto_shrink: false,
        };
        let sol = solve(&spec(), &opts, &SolveOptions::default()).unwrap();
        let lat = &sol.lattice;
        let pol = random_policy(lat, 3);
        let exact = evaluate_policy(lat, &sol.transitions, &(lat, &pol)).unwrap();
        let (s0, _) = lat.locate(&[0.25]);
        let paths = rollout(lat, &sol.transitions, &Markov((lat, &pol)), 0, 0, s0, 20_000, 8).unwrap();
        let est = Estimate::from_samples(&paths.iter().map(|p| p.payoff()).collect::<Vec<_>>());
        let want = exact[lat.node(0, 0, s0)];
        assert!((est.mean - want).abs() < 4.0 * est.std_error + 1e-12, "{est:?} vs {want}");
    }

    #[test]
    fn m_is_pathwise_constant_in_expectation_under_optimal_policy() {
        let opts = LatticeOptions {
            bounds: vec![(-1.0, 1.0)],
            points: vec![9],
            n_steps: 12,
            auto_shrink: false,
        };
        let sol = solve(&spec(), &opts, &SolveOptions::default()).unwrap();
        let lat = &sol.lattice;
        let (s0, _) = lat.locate(&[0.0]);
        let paths = rollout(lat, &sol.transitions, &Markov((lat, &sol.policy)), 0, 0, s0, 5_000, 1).unwrap();
        let v0 = sol.field.at(lat, 0, 0, s0);
        for p in &paths {
            assert_eq!(p.m_at(0, lat, &sol.field), v0);
            assert!((p.m_at(lat.n_steps(), lat, &sol.field) - p.payoff()).abs() < 1e-12);
        }
        let end: Vec<f64> = paths.iter().map(|p| p.payoff()).collect();
        let est = Estimate::from_samples(&end);
        assert!((est.mean - v0).abs() < 4.0 * est.std_error + 1e-12);
    }
}
