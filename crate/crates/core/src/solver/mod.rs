//! Markov-chain approximation on a lattice and backward induction.
//!
//! [`build_lattice`] discretises `(t, x, z)` and builds upwind transition
//! stencils, [`solve_backward`] computes the value on every node and
//! [`extract_policy`] reads off a greedy policy. Exact evaluation of any
//! Markov lattice policy ([`evaluate_policy`]) and chain simulation
//! ([`rollout`]) are the tools the verifier builds on.

mod backward;
mod export;
mod feedback;
mod lattice;
mod rollout;

pub use backward::{
    evaluate_policy, extract_policy, random_policy, solve_backward, LatticePolicy, NodeDecision, PolicyField,
    SliceStats, SolveOptions, ValueField,
};
pub use export::{read_field_binary, write_field_binary, write_field_csv, FieldSnapshot, FIELD_MAGIC, FIELD_VERSION};
pub use feedback::{Chain, LatticeFeedback, LatticeValues};
pub use lattice::{build_lattice, Axis, FuelAxis, Lattice, LatticeOptions, TransitionModel, MAX_SHRINKS};
pub use rollout::{rollout, ChainPath, ChainPolicy, Markov};

use serde::{Deserialize, Serialize};

use crate::problem::ProblemSpec;
use crate::Result;

/// Everything produced by one solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub lattice: Lattice,
    pub transitions: TransitionModel,
    pub field: ValueField,
    pub policy: PolicyField,
}

impl Solution {
    /// Value at `t = start_t` at the node nearest to `(x, z)`.
    pub fn value_at(&self, x: &[f64], z: f64) -> f64 {
        let (s, _) = self.lattice.locate(x);
        let (j, _) = self.lattice.locate_fuel(z);
        self.field.at(&self.lattice, 0, j, s)
    }

    pub fn values(&self) -> LatticeValues<'_> {
        LatticeValues {
            lattice: &self.lattice,
            field: &self.field,
            grid: self.lattice.grid,
        }
    }

    pub fn feedback(&self) -> LatticeFeedback<'_> {
        LatticeFeedback {
            lattice: &self.lattice,
            policy: &self.policy,
            grid: self.lattice.grid,
        }
    }
}

/// Builds the lattice, solves and extracts the greedy policy.
pub fn solve(spec: &ProblemSpec, lattice: &LatticeOptions, opts: &SolveOptions) -> Result<Solution> {
    let (lat, tr) = build_lattice(spec, lattice)?;
    let field = solve_backward(&lat, &tr, opts)?;
    let policy = extract_policy(&lat, &tr, &field, opts.tol_tie)?;
    Ok(Solution {
        lattice: lat,
        transitions: tr,
        field,
        policy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub h: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub value: f64,
}

/// Solves on successively halved spacings with `dt` shrinking like `h²`
/// and reports the value at `(x0, z0)` on each level.
///
/// Level `i` uses `2^i (points - 1) + 1` points per axis and `4^i` times
/// the base number of steps.
pub fn refinement_study(
    spec: &ProblemSpec,
    base: &LatticeOptions,
    opts: &SolveOptions,
    levels: usize,
    x0: &[f64],
    z0: f64,
) -> Result<Vec<RefinementRow>> {
    (0..levels)
        .map(|i| {
            let lo = LatticeOptions {
                bounds: base.bounds.clone(),
                points: base.points.iter().map(|p| ((p - 1) << i) + 1).collect(),
                n_steps: base.n_steps << (2 * i),
                auto_shrink: base.auto_shrink,
            };
            let sol = solve(spec, &lo, opts)?;
            Ok(RefinementRow {
                h: sol.lattice.axes[0].h(),
                dt: sol.lattice.grid.dt(),
                n_steps: sol.lattice.n_steps(),
                value: sol.value_at(x0, z0),
            })
        })
        .collect()
}
