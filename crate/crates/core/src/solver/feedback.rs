use super::backward::{NodeDecision, PolicyField, ValueField};
use super::lattice::Lattice;
use crate::controls::{Decision, NoiseFunctionalPolicy, NoiseView, StateView, TimeGrid};
use crate::payoff::ValueLookup;

/// Nearest-node lookup of a solved value field on a simulation grid.
pub struct LatticeValues<'a> {
    pub lattice: &'a Lattice,
    pub field: &'a ValueField,
    /// Grid the lookups are indexed by.
    pub grid: TimeGrid,
}

impl ValueLookup for LatticeValues<'_> {
    fn id(&self) -> String {
        format!("lattice:{:016x}", self.field.fingerprint)
    }

    fn lookup(&self, k: usize, x: &[f64], z: f64) -> (f64, bool) {
        let lat = self.lattice;
        let kl = lat.slice_at(self.grid.time(k));
        let (s, ox) = lat.locate(x);
        let (j, oz) = lat.locate_fuel(z);
        (self.field.at(lat, kl, j, s), ox || oz)
    }
}

/// Result of following exertion decisions from one node.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
    pub moves: usize,
    /// First non-exertion decision reached.
    pub terminal: NodeDecision,
}

/// Plays a lattice policy on the continuous-state simulator.
///
/// The state is mapped to its nearest node and the chain of exertions from
/// there is summed into one increment. If the chain ends in Stop the
/// increment is applied now and the stop happens at the next step, because
/// a stop suppresses that step's increment. A chain ending on an exterior
/// node keeps action 0. Without a state history the policy plays action 0.
pub struct LatticeFeedback<'a> {
    pub lattice: &'a Lattice,
    pub policy: &'a PolicyField,
    pub grid: TimeGrid,
}

impl LatticeFeedback<'_> {
    pub fn chain_at(&self, step: usize, x: &[f64], z: f64) -> Chain {
        let lat = self.lattice;
        let d = lat.dim();
        let k = lat.slice_at(self.grid.time(step));
        let (mut s, _) = lat.locate(x);
        let (mut j, _) = lat.locate_fuel(z);
        let mut chain = Chain {
            plus: vec![0.0; d],
            minus: vec![0.0; d],
            moves: 0,
            terminal: NodeDecision::Exit,
        };
        while chain.moves <= lat.slice_len() {
            match self.policy.decisions[lat.node(k, j, s)] {
                NodeDecision::Exert { coord, plus } => match lat.exert_target(j, s, coord, plus) {
                    Some((j2, s2)) => {
                        let h = lat.axes[coord].h();
                        if plus {
                            chain.plus[coord] += h;
                        } else {
                            chain.minus[coord] += h;
                        }
                        chain.moves += 1;
                        (j, s) = (j2, s2);
                    }
                    None => {
                        chain.terminal = NodeDecision::Continue { action: 0 };
                        return chain;
                    }
                },
                other => {
                    chain.terminal = other;
                    return chain;
                }
            }
        }
        chain.terminal = NodeDecision::Continue { action: 0 };
        chain
    }
}

impl NoiseFunctionalPolicy for LatticeFeedback<'_> {
    fn decide(&self, step: usize, _noise: NoiseView<'_>, state: Option<StateView<'_>>) -> Decision {
        let Some(st) = state else {
            return Decision::run(0);
        };
        if step > 0 {
            let prev = self.chain_at(step - 1, st.x_at(step - 1), st.z_at(step - 1));
            if prev.terminal == NodeDecision::Stop && prev.moves > 0 {
                return Decision::stop();
            }
        }
        let c = self.chain_at(step, st.x(), st.z());
        match c.terminal {
            NodeDecision::Stop if c.moves == 0 => Decision::stop(),
            NodeDecision::Continue { action } => Decision::exert(action, c.plus, c.minus),
            _ => Decision::exert(0, c.plus, c.minus),
        }
    }
}
