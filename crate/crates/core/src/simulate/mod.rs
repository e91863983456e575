//! Euler–Maruyama integration of the controlled state under a policy.

mod export;
mod noise;

pub use export::{read_bundle_binary, write_bundle_binary, write_bundle_csv, BUNDLE_MAGIC, BUNDLE_VERSION};
pub use noise::{path_noise, NoiseConstruction, NoiseOptions};

use crate::controls::{
    fuel_process, replay_policy, BVControlPath, EtaPath, NoiseFunctionalPolicy, Scratch, StateTrack, TimeGrid,
};
use crate::par;
use crate::problem::{Dims, ProblemSpec};
use crate::{Error, Result};

/// One simulated trajectory. Arrays are row-major; `states` and `fuel`
/// hold the grid values `X[0..=n]`, `Z[0..=n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub noise: Vec<f64>,
    pub states: Vec<f64>,
    pub fuel: Vec<f64>,
    pub actions: Vec<usize>,
    pub control: BVControlPath,
    pub eta: EtaPath,
    pub tau_step: usize,
    pub rho_step: usize,
}

impl SamplePath {
    pub fn grid(&self) -> TimeGrid {
        self.control.grid
    }

    pub fn dim(&self) -> usize {
        self.control.dim
    }

    pub fn x(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.states[k * d..(k + 1) * d]
    }

    pub fn z(&self, k: usize) -> f64 {
        self.fuel[k]
    }

    /// `min(τ, ρ)` as a step index.
    pub fn end_step(&self) -> usize {
        self.tau_step.min(self.rho_step)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub grid: TimeGrid,
    pub dims: Dims,
    pub x0: Vec<f64>,
    pub z0: f64,
    pub seed: u64,
    pub paths: Vec<SamplePath>,
}

impl PathBundle {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    pub noise: NoiseOptions,
}

pub(crate) fn check_start(spec: &ProblemSpec, x0: &[f64], z0: f64, grid: &TimeGrid) -> Result<()> {
    spec.check_structure()?;
    if x0.len() != spec.dims.state {
        return Err(Error::InvalidArgument(format!(
            "x0 has length {}, expected {}",
            x0.len(),
            spec.dims.state
        )));
    }
    if !(z0 >= 0.0) || spec.zbar().is_some_and(|zbar| z0 > zbar) {
        return Err(Error::InvalidArgument(format!("z0 = {z0} outside the fuel range")));
    }
    let tol = 1e-12 * spec.horizon.abs().max(1.0);
    if (grid.t0 - spec.start_t).abs() > tol || (grid.t_end - spec.horizon).abs() > tol {
        return Err(Error::InvalidArgument(format!(
            "grid [{}, {}] must span [start_t, horizon] = [{}, {}]",
            grid.t0, grid.t_end, spec.start_t, spec.horizon
        )));
    }
    Ok(())
}

/// First grid index at which `(X, Z)` is outside the domain, capped at `n`.
pub fn exit_step(spec: &ProblemSpec, states: &[f64], fuel: &[f64]) -> usize {
    let d = spec.dims.state;
    let n = fuel.len() - 1;
    (0..=n)
        .find(|&k| !spec.in_domain(&states[k * d..(k + 1) * d], fuel[k]))
        .unwrap_or(n)
}

/// Simulates one path on substream `path_index`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_one(
    spec: &ProblemSpec,
    policy: &dyn NoiseFunctionalPolicy,
    x0: &[f64],
    z0: f64,
    grid: TimeGrid,
    seed: u64,
    path_index: usize,
    opts: SimOptions,
) -> Result<SamplePath> {
    let noise = path_noise(&grid, spec.dims.noise, seed, path_index, opts.noise);
    simulate_on_noise(spec, policy, x0, z0, grid, noise, path_index)
}

/// Simulates one path on a given noise realisation.
pub fn simulate_on_noise(
    spec: &ProblemSpec,
    policy: &dyn NoiseFunctionalPolicy,
    x0: &[f64],
    z0: f64,
    grid: TimeGrid,
    noise: Vec<f64>,
    path_index: usize,
) -> Result<SamplePath> {
    let track = StateTrack {
        spec,
        x0,
        z0,
        path_index,
    };
    let r = replay_policy(policy, grid, &noise, spec.dims.noise, spec.dims.state, Some(track))?;
    let states = r.states.expect("tracked replay returns states");
    let fuel = r.fuel.expect("tracked replay returns fuel");
    let rho_step = exit_step(spec, &states, &fuel);
    Ok(SamplePath {
        noise,
        states,
        fuel,
        actions: r.actions,
        tau_step: r.eta.tau_step(),
        eta: r.eta,
        control: r.control,
        rho_step,
    })
}

pub fn simulate_paths(
    spec: &ProblemSpec,
    policy: &dyn NoiseFunctionalPolicy,
    x0: &[f64],
    z0: f64,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    simulate_paths_with(spec, policy, x0, z0, grid, n_paths, seed, SimOptions::default())
}

/// Simulates `n_paths` paths. The bundle is bit-identical for any thread count.
#[allow(clippy::too_many_arguments)]
pub fn simulate_paths_with(
    spec: &ProblemSpec,
    policy: &dyn NoiseFunctionalPolicy,
    x0: &[f64],
    z0: f64,
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
    opts: SimOptions,
) -> Result<PathBundle> {
    check_start(spec, x0, z0, &grid)?;
    let paths = par::try_map_range(n_paths, |i| simulate_one(spec, policy, x0, z0, grid, seed, i, opts))?;
    Ok(PathBundle {
        grid,
        dims: spec.dims,
        x0: x0.to_vec(),
        z0,
        seed,
        paths,
    })
}

/// Integrates the state for a treble that was materialised beforehand.
/// The control is applied as given; no fuel gate is used.
#[allow(clippy::too_many_arguments)]
pub fn integrate_treble(
    spec: &ProblemSpec,
    grid: TimeGrid,
    noise: Vec<f64>,
    x0: &[f64],
    z0: f64,
    control: BVControlPath,
    eta: EtaPath,
    actions: Vec<usize>,
    path_index: usize,
) -> Result<SamplePath> {
    let d = spec.dims.state;
    let dp = spec.dims.noise;
    let n = grid.n_steps;
    if control.dim != d || control.grid != grid || actions.len() != n || noise.len() != n * dp {
        return Err(Error::InvalidArgument("treble does not match grid and dimensions".into()));
    }
    let mut states = Vec::with_capacity((n + 1) * d);
    states.extend_from_slice(x0);
    let mut scratch = Scratch::new(d, dp);
    for k in 0..n {
        let x = states[k * d..(k + 1) * d].to_vec();
        if let Some(what) = scratch.euler_step(
            spec,
            grid.time(k),
            grid.dt(),
            &x,
            actions[k],
            &noise[k * dp..(k + 1) * dp],
            control.plus(k),
            control.minus(k),
        ) {
            return Err(Error::NonFinite {
                what,
                path: path_index,
                step: k,
            });
        }
        states.extend_from_slice(&scratch.next);
    }
    let fuel = fuel_process(&control, z0)?;
    let rho_step = exit_step(spec, &states, &fuel);
    Ok(SamplePath {
        noise,
        states,
        fuel,
        actions,
        tau_step: eta.tau_step(),
        eta,
        control,
        rho_step,
    })
}

/// Per-path exit steps recomputed from the stored states.
pub fn exit_time(bundle: &PathBundle, spec: &ProblemSpec) -> Vec<usize> {
    bundle
        .paths
        .iter()
        .map(|p| exit_step(spec, &p.states, &p.fuel))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controls::{ConstantPolicy, Decision, FnPolicy, NoiseView, StateView};
    use crate::problem::FuelMode;
    use crate::stats::sample_variance;

    fn dims1() -> Dims {
        Dims {
            state: 1,
            noise: 1,
            action: 1,
        }
    }

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn still_state_without_coefficients() {
        let spec = ProblemSpec::builder(dims1(), 1.0).build();
        let b = simulate_paths(&spec, &ConstantPolicy::default(), &[0.3], 0.0, grid(10), 4, 1).unwrap();
        for p in &b.paths {
            assert!(p.states.iter().all(|x| *x == 0.3));
        }
    }

    #[test]
    fn unit_drift_reaches_one() {
        let spec = ProblemSpec::builder(dims1(), 1.0)
            .drift(|_, _, _, out| out[0] = 1.0)
            .build();
        let b = simulate_paths(&spec, &ConstantPolicy::default(), &[0.0], 0.0, grid(10), 1, 1).unwrap();
        assert!((b.paths[0].x(10)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn brownian_variance() {
        let spec = ProblemSpec::builder(dims1(), 1.0)
            .diffusion(|_, _, _, out| out[0] = 1.0)
            .build();
        let n = 100_000;
        let b = simulate_paths(&spec, &ConstantPolicy::default(), &[0.0], 0.0, grid(4), n, 5).unwrap();
        let ends: Vec<f64> = b.paths.iter().map(|p| p.x(4)[0]).collect();
        let v = sample_variance(&ends);
        // Standard error of the sample variance of N(0, 1) is sqrt(2 / (n - 1)).
        assert!((v - 1.0).abs() < 3.0 * (2.0 / (n as f64 - 1.0)).sqrt(), "{v}");
    }

    #[test]
    fn exit_examples() {
        let spec = ProblemSpec::builder(dims1(), 1.0).build();
        let b = simulate_paths(&spec, &ConstantPolicy::default(), &[0.0], 0.0, grid(10), 2, 1).unwrap();
        assert_eq!(exit_time(&b, &spec), vec![10, 10]);

        let outside = ProblemSpec::builder(dims1(), 1.0).domain(|x, _| x[0] < 0.5).build();
        let b = simulate_paths(&outside, &ConstantPolicy::default(), &[1.0], 0.0, grid(10), 1, 1).unwrap();
        assert_eq!(b.paths[0].rho_step, 0);

        let moving = ProblemSpec::builder(dims1(), 1.0)
            .drift(|_, _, _, out| out[0] = 1.0)
            .domain(|x, _| x[0] < 0.5)
            .build();
        let b = simulate_paths(&moving, &ConstantPolicy::default(), &[0.0], 0.0, grid(10), 1, 1).unwrap();
        // X[5] = 5 * 0.1 accumulates to 0.5 up to rounding; the crossing is at step 5 or 6.
        let expect = (0..=10).find(|&k| !(b.paths[0].x(k)[0] < 0.5)).unwrap();
        assert_eq!(b.paths[0].rho_step, expect);
        assert!(expect == 5 || expect == 6);
    }

    #[test]
    fn exit_on_exact_grid_crossing() {
        let spec = ProblemSpec::builder(dims1(), 1.0)
            .drift(|_, _, _, out| out[0] = 1.0)
            .domain(|x, _| x[0] < 0.5)
            .build();
        let g = TimeGrid::new(0.0, 1.0, 8).unwrap();
        // dt = 0.125 is exact in binary, so X[4] = 0.5 exactly.
        let b = simulate_paths(&spec, &ConstantPolicy::default(), &[0.0], 0.0, g, 1, 1).unwrap();
        assert_eq!(b.paths[0].rho_step, 4);
    }

    #[test]
    fn reproducible_and_non_anticipative() {
        let spec = ProblemSpec::builder(dims1(), 1.0)
            .diffusion(|_, x, _, out| out[0] = 1.0 + 0.1 * x[0].sin())
            .fuel(FuelMode::Finite { zbar: 1.0 })
            .build();
        let pol = FnPolicy(|_k: usize, noise: NoiseView<'_>, s: Option<StateView<'_>>| {
            let last = if noise.is_empty() { 0.0 } else { noise.increment(noise.len() - 1)[0] };
            if s.unwrap().x()[0] < -0.2 && last < 0.0 {
                Decision::exert(0, vec![0.1], vec![])
            } else {
                Decision::run(0)
            }
        });
        let g = grid(20);
        let a = simulate_paths(&spec, &pol, &[0.0], 0.0, g, 16, 3).unwrap();
        let b = simulate_paths(&spec, &pol, &[0.0], 0.0, g, 16, 3).unwrap();
        assert_eq!(a, b);

        let p = &a.paths[0];
        let k = 9;
        let mut noise = p.noise.clone();
        for v in &mut noise[k..] {
            *v += 1.0;
        }
        let q = simulate_on_noise(&spec, &pol, &[0.0], 0.0, g, noise, 0).unwrap();
        assert_eq!(&p.states[..=k], &q.states[..=k]);
        assert_eq!(&p.actions[..k], &q.actions[..k]);
        for j in 0..k {
            assert_eq!(p.control.plus(j), q.control.plus(j));
        }
        assert!(a.paths.iter().all(|p| p.fuel.iter().all(|z| *z <= 1.0 + 1e-12)));
    }

    #[test]
    fn rejects_bad_start() {
        let spec = ProblemSpec::builder(dims1(), 1.0)
            .fuel(FuelMode::Finite { zbar: 1.0 })
            .build();
        let pol = ConstantPolicy::default();
        assert!(simulate_paths(&spec, &pol, &[0.0], 1.5, grid(4), 1, 0).is_err());
        let other = TimeGrid::new(0.0, 2.0, 4).unwrap();
        assert!(simulate_paths(&spec, &pol, &[0.0], 0.0, other, 1, 0).is_err());
    }

    #[test]
    fn reports_non_finite_coefficients() {
        let spec = ProblemSpec::builder(dims1(), 1.0)
            .drift(|t, _, _, out| out[0] = if t > 0.45 { f64::NAN } else { 0.0 })
            .build();
        let err = simulate_paths(&spec, &ConstantPolicy::default(), &[0.0], 0.0, grid(10), 3, 0).unwrap_err();
        match err {
            Error::NonFinite { what, path, step } => {
                assert_eq!(what, "drift");
                assert_eq!(path, 0);
                assert_eq!(step, 5);
            }
            other => panic!("{other}"),
        }
    }
}
