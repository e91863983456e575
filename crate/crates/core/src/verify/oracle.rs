//! Exhaustive oracle for the optimal lattice value.
//!
//! Nothing here reuses the solver's recursions: small instances are solved
//! either by enumerating every decision map on the reachable nodes and
//! pushing probability mass forward under each, or by an expectimax search
//! over the full history tree without memoisation.

use serde::{Deserialize, Serialize};

use crate::payoff::{jump_cost, CostScratch};
use crate::solver::{Lattice, NodeDecision, TransitionModel};
use crate::{Error, Result};

/// Largest number of decision maps (or search-tree nodes) the oracle visits.
pub const ORACLE_GUARD: u64 = 10_000_000;

/// Map enumeration is used up to this many maps; the history search beyond.
pub const ENUMERATION_LIMIT: u64 = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    /// Every node-to-decision map, evaluated by forward propagation.
    Enumeration,
    /// Max-expectation search over all decision histories.
    HistorySearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub value: f64,
    pub method: OracleMethod,
    /// Maps evaluated or tree nodes expanded.
    pub work: u64,
}

struct Ctx<'a> {
    lat: &'a Lattice,
    tr: &'a TransitionModel,
}

impl Ctx<'_> {
    fn ns(&self) -> usize {
        self.lat.n_states()
    }

    fn t(&self, k: usize) -> f64 {
        self.lat.grid.time(k)
    }

    fn g1(&self, k: usize, j: usize, s: usize) -> f64 {
        self.lat.spec.exit_gain_at(self.t(k), self.lat.x(s), self.lat.z(j))
    }

    fn g2(&self, k: usize, j: usize, s: usize) -> f64 {
        self.lat.spec.stop_gain_at(self.t(k), self.lat.x(s), self.lat.z(j))
    }

    fn running(&self, k: usize, j: usize, s: usize, a: usize) -> f64 {
        self.lat.spec.running_gain_at(self.t(k), self.lat.x(s), self.lat.z(j), a) * self.lat.grid.dt()
    }

    fn absorbed(&self, k: usize, j: usize, s: usize) -> bool {
        k == self.lat.n_steps() || self.lat.is_exterior(j, s)
    }

    fn push_cost(&self, k: usize, s: usize, coord: usize, plus: bool) -> Result<f64> {
        let d = self.lat.dim();
        let mut inc = vec![0.0; d];
        inc[coord] = self.lat.axes[coord].h();
        let zero = vec![0.0; d];
        let mut buf = CostScratch::new(d);
        let (p, m) = if plus { (&inc, &zero) } else { (&zero, &inc) };
        jump_cost(&self.lat.spec, self.t(k), self.lat.x(s), p, m, &mut buf)
    }

    /// Every decision available at an interior node, in a fixed order.
    fn options(&self, j: usize, s: usize) -> Vec<NodeDecision> {
        let mut out = vec![NodeDecision::Stop];
        out.extend((0..self.tr.n_actions()).map(|action| NodeDecision::Continue { action }));
        for coord in 0..self.lat.dim() {
            for plus in [true, false] {
                if self.lat.exert_target(j, s, coord, plus).is_some() {
                    out.push(NodeDecision::Exert { coord, plus });
                }
            }
        }
        out
    }
}

/// Optimal expected payoff from `(0, j0, s0)`, found without dynamic
/// programming. Errors with `InstanceTooLarge` past [`ORACLE_GUARD`].
pub fn brute_force_value(lat: &Lattice, tr: &TransitionModel, j0: usize, s0: usize) -> Result<OracleResult> {
    let cx = Ctx { lat, tr };
    let reach = reachable(&cx, j0, s0);
    let mut maps: u64 = 1;
    for &node in &reach {
        let (_, j, s) = lat.split(node);
        maps = maps.saturating_mul(cx.options(j, s).len() as u64);
    }
    if maps <= ENUMERATION_LIMIT {
        let value = enumerate(&cx, &reach, j0, s0)?;
        return Ok(OracleResult {
            value,
            method: OracleMethod::Enumeration,
            work: maps,
        });
    }
    let mut work = 0;
    let mut chain = Vec::new();
    let value = search(&cx, 0, j0, s0, &mut chain, &mut work)?;
    Ok(OracleResult {
        value,
        method: OracleMethod::HistorySearch,
        work,
    })
}

/// Interior nodes reachable from the root under some policy.
fn reachable(cx: &Ctx<'_>, j0: usize, s0: usize) -> Vec<usize> {
    let lat = cx.lat;
    let mut seen = vec![false; lat.n_nodes()];
    let mut stack = vec![lat.node(0, j0, s0)];
    let mut out = Vec::new();
    while let Some(node) = stack.pop() {
        if std::mem::replace(&mut seen[node], true) {
            continue;
        }
        let (k, j, s) = lat.split(node);
        if cx.absorbed(k, j, s) {
            continue;
        }
        out.push(node);
        for a in 0..cx.tr.n_actions() {
            for &t in cx.tr.stencil(k, s, a).0 {
                stack.push(lat.node(k + 1, j, t as usize));
            }
        }
        for coord in 0..lat.dim() {
            for plus in [true, false] {
                if let Some((j2, s2)) = lat.exert_target(j, s, coord, plus) {
                    stack.push(lat.node(k, j2, s2));
                }
            }
        }
    }
    out.sort_unstable();
    out
}

fn enumerate(cx: &Ctx<'_>, reach: &[usize], j0: usize, s0: usize) -> Result<f64> {
    let lat = cx.lat;
    let options: Vec<Vec<NodeDecision>> = reach
        .iter()
        .map(|&node| {
            let (_, j, s) = lat.split(node);
            cx.options(j, s)
        })
        .collect();
    let mut slot = vec![usize::MAX; lat.n_nodes()];
    for (i, &node) in reach.iter().enumerate() {
        slot[node] = i;
    }
    let mut choice = vec![0usize; reach.len()];
    let mut best = f64::NEG_INFINITY;
    loop {
        if let Some(v) = forward(cx, &options, &slot, &choice, j0, s0)? {
            best = best.max(v);
        }
        // Odometer increment.
        let mut i = 0;
        loop {
            if i == choice.len() {
                return Ok(best);
            }
            choice[i] += 1;
            if choice[i] < options[i].len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

/// Expected payoff of one decision map by forward mass propagation, or
/// `None` if an exertion chain loops.
fn forward(
    cx: &Ctx<'_>,
    options: &[Vec<NodeDecision>],
    slot: &[usize],
    choice: &[usize],
    j0: usize,
    s0: usize,
) -> Result<Option<f64>> {
    let lat = cx.lat;
    let ns = cx.ns();
    let width = lat.n_fuel() * ns;
    let mut mass = vec![0.0; width];
    mass[j0 * ns + s0] = 1.0;
    let mut total = 0.0;
    for k in 0..=lat.n_steps() {
        let mut next = vec![0.0; width];
        for js in 0..width {
            let p = mass[js];
            if p == 0.0 {
                continue;
            }
            let (mut j, mut s) = (js / ns, js % ns);
            let mut hops = 0;
            loop {
                if cx.absorbed(k, j, s) {
                    total += p * cx.g1(k, j, s);
                    break;
                }
                let node = lat.node(k, j, s);
                match options[slot[node]][choice[slot[node]]] {
                    NodeDecision::Stop => {
                        total += p * cx.g2(k, j, s);
                        break;
                    }
                    NodeDecision::Continue { action } => {
                        total += p * cx.running(k, j, s, action);
                        let (ts, ps) = cx.tr.stencil(k, s, action);
                        for (t, q) in ts.iter().zip(ps) {
                            next[j * ns + *t as usize] += p * q;
                        }
                        break;
                    }
                    NodeDecision::Exert { coord, plus } => {
                        total -= p * cx.push_cost(k, s, coord, plus)?;
                        (j, s) = lat.exert_target(j, s, coord, plus).expect("option list only has valid pushes");
                        hops += 1;
                        if hops > width {
                            return Ok(None);
                        }
                    }
                    NodeDecision::Exit => unreachable!(),
                }
            }
        }
        mass = next;
    }
    Ok(Some(total))
}

fn search(cx: &Ctx<'_>, k: usize, j: usize, s: usize, chain: &mut Vec<(usize, usize)>, work: &mut u64) -> Result<f64> {
    *work += 1;
    if *work > ORACLE_GUARD {
        return Err(Error::InstanceTooLarge(format!(
            "history search exceeded {ORACLE_GUARD} nodes"
        )));
    }
    if cx.absorbed(k, j, s) {
        return Ok(cx.g1(k, j, s));
    }
    let mut best = cx.g2(k, j, s);
    for a in 0..cx.tr.n_actions() {
        let (ts, ps) = cx.tr.stencil(k, s, a);
        let mut ev = 0.0;
        for (t, q) in ts.iter().zip(ps) {
            ev += q * search(cx, k + 1, j, *t as usize, &mut Vec::new(), work)?;
        }
        best = best.max(cx.running(k, j, s, a) + ev);
    }
    chain.push((j, s));
    for coord in 0..cx.lat.dim() {
        for plus in [true, false] {
            if let Some((j2, s2)) = cx.lat.exert_target(j, s, coord, plus) {
                // A push back onto the current chain can never help: it
                // returns to the same node having paid non-negative costs.
                if chain.contains(&(j2, s2)) {
                    continue;
                }
                let v = search(cx, k, j2, s2, chain, work)? - cx.push_cost(k, s, coord, plus)?;
                best = best.max(v);
            }
        }
    }
    chain.pop();
    Ok(best)
}
