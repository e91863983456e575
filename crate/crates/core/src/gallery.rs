//! Built-in benchmark instances, each with a lattice and a start point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::problem::{
    CostConvention, CostForm, DiffusionForm, Dims, DomainForm, DriftForm, Exertable, FuelMode, GainForm, Monomial,
    ProblemConfig, ProblemSpec,
};
use crate::solver::LatticeOptions;
use crate::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GalleryInstance {
    pub problem: ProblemConfig,
    pub lattice: LatticeOptions,
    pub x0: Vec<f64>,
    pub z0: f64,
}

impl GalleryInstance {
    pub fn name(&self) -> &str {
        &self.problem.name
    }

    pub fn spec(&self) -> Result<ProblemSpec> {
        self.problem.build()
    }

    /// Whether any diffusion coefficient is nonzero.
    pub fn is_stochastic(&self) -> bool {
        match &self.problem.diffusion {
            DiffusionForm::Zero => false,
            DiffusionForm::Constant { value } => value.iter().flatten().any(|v| *v != 0.0),
            DiffusionForm::Affine { offset, slopes } => {
                offset.iter().chain(slopes.iter().flatten()).flatten().any(|v| *v != 0.0)
            }
        }
    }
}

fn dims1(action: usize) -> Dims {
    Dims {
        state: 1,
        noise: 1,
        action,
    }
}

fn mono(coef: f64, x: u32) -> Monomial {
    Monomial {
        coef,
        t: 0,
        x: vec![x],
        z: 0,
        a: vec![],
    }
}

fn poly(terms: Vec<Monomial>) -> GainForm {
    GainForm::Polynomial { terms }
}

fn base(name: &str, horizon: f64, dims: Dims, actions: Vec<Vec<f64>>, fuel: FuelMode) -> ProblemConfig {
    ProblemConfig {
        name: name.into(),
        horizon,
        start_t: 0.0,
        dims,
        drift: DriftForm::Zero,
        diffusion: DiffusionForm::Zero,
        running_gain: GainForm::Zero,
        exit_gain: GainForm::Zero,
        stop_gain: GainForm::Zero,
        cost_plus: CostForm::Zero,
        cost_minus: CostForm::Zero,
        domain: DomainForm::Everything,
        action_set: actions,
        fuel,
        cost_convention: CostConvention::Stieltjes,
        payoff_floor: 0.0,
        exertable: None,
    }
}

fn lattice(lo: f64, hi: f64, points: usize, n_steps: usize) -> LatticeOptions {
    LatticeOptions {
        bounds: vec![(lo, hi)],
        points: vec![points],
        n_steps,
        auto_shrink: false,
    }
}

/// American put on a driftless diffusion; no singular control.
pub fn stopping_only() -> GalleryInstance {
    let mut p = base("stopping_only", 1.0, dims1(1), vec![vec![0.0]], FuelMode::Infinite { p: 2.0 });
    p.diffusion = DiffusionForm::Constant { value: vec![vec![0.4]] };
    let put = GainForm::Hinge {
        weights: vec![-1.0],
        offset: 1.0,
        scale: 1.0,
    };
    p.stop_gain = put.clone();
    p.exit_gain = put;
    p.exertable = Some(vec![Exertable {
        plus: false,
        minus: false,
    }]);
    GalleryInstance {
        problem: p,
        lattice: lattice(0.0, 2.0, 21, 16),
        x0: vec![1.0],
        z0: 0.0,
    }
}

/// Deterministic drift pushed back towards the origin at unit cost.
pub fn pure_drift_follower() -> GalleryInstance {
    let mut p = base("pure_drift_follower", 1.0, dims1(1), vec![vec![0.0]], FuelMode::Infinite { p: 2.0 });
    p.drift = DriftForm::Constant { value: vec![1.0] };
    p.running_gain = poly(vec![mono(-1.0, 2)]);
    p.stop_gain = GainForm::Constant { value: -10.0 };
    p.cost_plus = CostForm::Constant { value: vec![0.2] };
    p.cost_minus = CostForm::Constant { value: vec![0.2] };
    GalleryInstance {
        problem: p,
        lattice: lattice(-1.0, 2.0, 13, 12),
        x0: vec![0.0],
        z0: 0.0,
    }
}

/// Monotone follower with a fuel budget.
pub fn finite_fuel_follower() -> GalleryInstance {
    let mut p = base("finite_fuel_follower", 1.0, dims1(1), vec![vec![0.0]], FuelMode::Finite { zbar: 1.0 });
    p.diffusion = DiffusionForm::Constant { value: vec![vec![0.5]] };
    p.running_gain = poly(vec![mono(-1.0, 2)]);
    p.exit_gain = poly(vec![mono(-1.0, 2)]);
    p.stop_gain = GainForm::Constant { value: -10.0 };
    p.cost_plus = CostForm::Constant { value: vec![0.3] };
    p.cost_minus = CostForm::Constant { value: vec![0.3] };
    GalleryInstance {
        problem: p,
        lattice: lattice(-2.0, 2.0, 17, 16),
        x0: vec![0.5],
        z0: 0.0,
    }
}

/// Reaching either end of `(-1, 1)` pays; steering costs a running penalty.
pub fn exit_domain() -> GalleryInstance {
    let mut p = base(
        "exit_domain",
        1.0,
        dims1(1),
        vec![vec![-0.5], vec![0.0], vec![0.5]],
        FuelMode::Finite { zbar: 0.5 },
    );
    p.drift = DriftForm::Affine {
        offset: vec![0.0],
        state_matrix: None,
        action_matrix: Some(vec![vec![1.0]]),
    };
    p.diffusion = DiffusionForm::Constant { value: vec![vec![0.3]] };
    p.running_gain = GainForm::Polynomial {
        terms: vec![Monomial {
            coef: -0.4,
            t: 0,
            x: vec![0],
            z: 0,
            a: vec![2],
        }],
    };
    p.exit_gain = poly(vec![mono(1.0, 2)]);
    p.stop_gain = GainForm::Constant { value: -0.5 };
    p.cost_plus = CostForm::Constant { value: vec![0.6] };
    p.cost_minus = CostForm::Constant { value: vec![0.6] };
    p.domain = DomainForm::Box {
        lo: vec![Some(-1.0)],
        hi: vec![Some(1.0)],
    };
    GalleryInstance {
        problem: p,
        lattice: lattice(-1.25, 1.25, 11, 16),
        x0: vec![0.0],
        z0: 0.0,
    }
}

/// Smooth one-dimensional instance with Lipschitz coefficients, used for
/// Monte Carlo consistency and refinement.
pub fn lipschitz_1d() -> GalleryInstance {
    let mut p = base("lipschitz_1d", 1.0, dims1(1), vec![vec![-0.5], vec![0.5]], FuelMode::Infinite { p: 2.0 });
    p.drift = DriftForm::Affine {
        offset: vec![0.0],
        state_matrix: None,
        action_matrix: Some(vec![vec![1.0]]),
    };
    p.diffusion = DiffusionForm::Constant { value: vec![vec![0.5]] };
    p.running_gain = poly(vec![mono(-1.0, 2)]);
    p.exit_gain = poly(vec![mono(-1.0, 2)]);
    p.stop_gain = GainForm::Constant { value: -10.0 };
    p.cost_plus = CostForm::Constant { value: vec![1.0] };
    p.cost_minus = CostForm::Constant { value: vec![1.0] };
    GalleryInstance {
        problem: p,
        lattice: lattice(-3.0, 3.0, 13, 8),
        x0: vec![0.5],
        z0: 0.0,
    }
}

/// Mixed instance at the largest size the brute-force oracle is run on:
/// 4 steps, 7 stored states, 3 fuel levels, 2 actions.
pub fn oracle_instance() -> GalleryInstance {
    let mut p = base(
        "oracle_4x7x3x2",
        1.0,
        dims1(1),
        vec![vec![-0.4], vec![0.3]],
        FuelMode::Finite { zbar: 1.0 },
    );
    p.drift = DriftForm::Affine {
        offset: vec![0.1],
        state_matrix: None,
        action_matrix: Some(vec![vec![1.0]]),
    };
    p.diffusion = DiffusionForm::Constant { value: vec![vec![0.3]] };
    p.running_gain = poly(vec![mono(0.2, 0), mono(-0.8, 2)]);
    p.exit_gain = poly(vec![mono(0.5, 1), mono(-0.6, 2)]);
    p.stop_gain = poly(vec![mono(-0.3, 0), mono(0.4, 1)]);
    p.cost_plus = CostForm::Constant { value: vec![0.15] };
    p.cost_minus = CostForm::Constant { value: vec![0.25] };
    GalleryInstance {
        problem: p,
        lattice: lattice(-1.0, 1.0, 5, 4),
        x0: vec![0.0],
        z0: 0.0,
    }
}

/// The benchmark gallery.
pub fn gallery() -> Vec<GalleryInstance> {
    vec![
        stopping_only(),
        pure_drift_follower(),
        finite_fuel_follower(),
        exit_domain(),
        lipschitz_1d(),
    ]
}

pub fn by_name(name: &str) -> Option<GalleryInstance> {
    gallery().into_iter().find(|g| g.name() == name)
}

/// A small random instance: 4 steps, at most 5 lattice points (7 stored
/// states with ghosts), at most 3 fuel levels and at most 2 actions.
pub fn random_small_instance(seed: u64) -> GalleryInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = rng.random_range(3..=5usize);
    let h = 2.0 / (points - 1) as f64;
    let n_actions = rng.random_range(1..=2usize);
    let actions: Vec<Vec<f64>> = (0..n_actions).map(|_| vec![rng.random_range(-0.5..0.5)]).collect();
    let fuel = match rng.random_range(0..4u8) {
        0 => FuelMode::Infinite { p: 2.0 },
        k => FuelMode::Finite {
            zbar: (k - 1) as f64 * h,
        },
    };
    let mut p = base(&format!("random_{seed}"), 1.0, dims1(1), actions, fuel);
    p.drift = DriftForm::Affine {
        offset: vec![rng.random_range(-0.3..0.3)],
        state_matrix: None,
        action_matrix: Some(vec![vec![1.0]]),
    };
    // Keeps dt σ² / h² below 1/2 for every point count.
    p.diffusion = DiffusionForm::Constant {
        value: vec![vec![rng.random_range(0.1..0.7) * h]],
    };
    let mut coef = |lo: f64, hi: f64| rng.random_range(lo..hi);
    p.running_gain = GainForm::Polynomial {
        terms: vec![
            mono(coef(-1.0, 1.0), 0),
            mono(coef(-1.0, 1.0), 1),
            mono(coef(-1.0, 0.0), 2),
            Monomial {
                coef: coef(-0.5, 0.5),
                t: 0,
                x: vec![0],
                z: 0,
                a: vec![1],
            },
        ],
    };
    p.exit_gain = poly(vec![mono(coef(-1.0, 1.0), 0), mono(coef(-1.0, 1.0), 1), mono(coef(-1.0, 1.0), 2)]);
    p.stop_gain = poly(vec![mono(coef(-1.5, 0.5), 0), mono(coef(-1.0, 1.0), 1)]);
    p.cost_plus = CostForm::Constant {
        value: vec![coef(0.0, 0.5)],
    };
    p.cost_minus = CostForm::Constant {
        value: vec![coef(0.0, 0.5)],
    };
    let x0 = -1.0 + h * rng.random_range(0..points) as f64;
    GalleryInstance {
        problem: p,
        lattice: lattice(-1.0, 1.0, points, 4),
        x0: vec![x0],
        z0: 0.0,
    }
}
