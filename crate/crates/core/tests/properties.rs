use proptest::prelude::*;

use fuelgrid::controls::{
    eta_to_tau_step, tau_to_eta, total_variation, truncate_control, BVControlPath, Decision, FnPolicy, NoiseView,
    StateView, TimeGrid, TruncationMode,
};
use fuelgrid::gallery::random_small_instance;
use fuelgrid::par;
use fuelgrid::payoff::{
    compute_m, cost_integral, cost_window, evaluate_gamma, evaluate_lambda, jump_cost, CostScratch, ValueLookup,
};
use fuelgrid::problem::{validate_problem, CostConvention, Dims, FuelMode, ProblemSpec};
use fuelgrid::simulate::{integrate_treble, path_noise, simulate_on_noise, simulate_paths, NoiseOptions};
use fuelgrid::solver::{evaluate_policy, solve, NodeDecision, SolveOptions};
use fuelgrid::verify::{brute_force_value, concatenate_policies, one_step_residuals, Bin, PartitionScheme};

fn dims1() -> Dims {
    Dims {
        state: 1,
        noise: 1,
        action: 1,
    }
}

fn fuel_spec(zbar: f64) -> ProblemSpec {
    ProblemSpec::builder(dims1(), 1.0)
        .drift(|_, _, a, o| o[0] = a[0])
        .diffusion(|_, _, _, o| o[0] = 0.6)
        .actions(vec![vec![-0.3], vec![0.3]])
        .running_gain(|_, x, _, a| -x[0] * x[0] + 0.1 * a[0])
        .exit_gain(|_, x, z| x[0] - 0.2 * z)
        .stop_gain(|t, x, _| 0.5 * x[0] - t)
        .cost_plus(|_, x, o| o[0] = 0.2 + 0.1 * x[0].abs())
        .cost_minus(|_, _, o| o[0] = 0.3)
        .domain(|x, _| x[0].abs() < 1.5)
        .fuel(FuelMode::Finite { zbar })
        .build()
}

/// Noise-driven policy: exerts against large excursions, switches action on
/// the last increment and stops once the noise sum crosses a level.
fn noisy(step: usize, noise: NoiseView<'_>, st: Option<StateView<'_>>) -> Decision {
    let sum: f64 = noise.raw().iter().sum();
    if step > 2 && sum > 0.8 {
        return Decision::stop();
    }
    let last = if noise.is_empty() { 0.0 } else { noise.increment(step - 1)[0] };
    let action = (last > 0.0) as usize;
    let x = st.map_or(0.0, |s| s.x()[0]);
    if x > 0.4 {
        Decision::exert(action, vec![], vec![0.5 * x])
    } else if x < -0.4 {
        Decision::exert(action, vec![-0.5 * x], vec![])
    } else {
        Decision::run(action)
    }
}

fn random_bv(n: usize, d: usize, seed: u64) -> BVControlPath {
    let grid = TimeGrid::new(0.0, 1.0, n).unwrap();
    let noise = path_noise(&TimeGrid::new(0.0, 1.0, 2 * n * d).unwrap(), 1, seed, 0, NoiseOptions::default());
    let plus = noise[..n * d].iter().map(|v| v.max(0.0) * 3.0).collect();
    let minus = noise[n * d..].iter().map(|v| v.max(0.0) * 3.0).collect();
    BVControlPath::from_increments(grid, d, plus, minus).unwrap()
}

struct Quadratic;

impl ValueLookup for Quadratic {
    fn id(&self) -> String {
        "quadratic".into()
    }

    fn lookup(&self, k: usize, x: &[f64], z: f64) -> (f64, bool) {
        (x[0] * x[0] - 0.1 * k as f64 + z, false)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn validation_is_deterministic(seed in any::<u64>(), samples in 1usize..40) {
        let spec = fuel_spec(1.0);
        let a = validate_problem(&spec, samples, seed).unwrap();
        let b = validate_problem(&spec, samples, seed).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn total_variation_is_additive(n in 1usize..30, d in 1usize..4, seed in any::<u64>(), cuts in (0usize..100, 0usize..100, 0usize..100)) {
        let xi = random_bv(n, d, seed);
        let mut c = [cuts.0 % (n + 1), cuts.1 % (n + 1), cuts.2 % (n + 1)];
        c.sort();
        let whole = total_variation(&xi, c[0], c[2]).unwrap();
        let parts = total_variation(&xi, c[0], c[1]).unwrap() + total_variation(&xi, c[1], c[2]).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-12 * whole.max(1.0));
    }

    #[test]
    fn truncation_respects_budget(n in 1usize..30, d in 1usize..4, seed in any::<u64>(), from in 0usize..30, frac in 0.0f64..1.5) {
        let xi = random_bv(n, d, seed);
        let from = from.min(n);
        let total = total_variation(&xi, from, n).unwrap();
        let budget = frac * total;
        let strict = truncate_control(&xi, from, budget, TruncationMode::Strict).unwrap();
        let clip = truncate_control(&xi, from, budget, TruncationMode::Clip).unwrap();
        prop_assert!(total_variation(&strict, from, n).unwrap() <= budget * (1.0 + 1e-12) + 1e-15);
        let c = total_variation(&clip, from, n).unwrap();
        prop_assert!((c - total.min(budget)).abs() <= 1e-12 * total.max(1.0));
        for k in 0..from {
            prop_assert_eq!(strict.plus(k), xi.plus(k));
            prop_assert_eq!(clip.minus(k), xi.minus(k));
        }
    }

    #[test]
    fn eta_tau_round_trip(n in 1usize..5000, k in 0usize..5000) {
        let grid = TimeGrid::new(0.0, 2.0, n).unwrap();
        let k = k % (n + 1);
        let eta = tau_to_eta(k, grid).unwrap();
        prop_assert_eq!(eta_to_tau_step(&eta), k);
        prop_assert_eq!(tau_to_eta(eta_to_tau_step(&eta), grid).unwrap(), eta);
    }

    #[test]
    fn replay_is_non_anticipative(seed in any::<u64>(), k in 0usize..16, bump in -2.0f64..2.0) {
        let spec = fuel_spec(1.0);
        let grid = TimeGrid::new(0.0, 1.0, 16).unwrap();
        let noise = path_noise(&grid, 1, seed, 0, NoiseOptions::default());
        let mut other = noise.clone();
        for v in &mut other[k..] {
            *v += bump;
        }
        let a = simulate_on_noise(&spec, &FnPolicy(noisy), &[0.1], 0.2, grid, noise, 0).unwrap();
        let b = simulate_on_noise(&spec, &FnPolicy(noisy), &[0.1], 0.2, grid, other, 0).unwrap();
        prop_assert_eq!(&a.states[..=k], &b.states[..=k]);
        prop_assert_eq!(&a.fuel[..=k], &b.fuel[..=k]);
        prop_assert_eq!(&a.actions[..k], &b.actions[..k]);
        for j in 0..k {
            prop_assert_eq!(a.control.plus(j), b.control.plus(j));
            prop_assert_eq!(a.control.minus(j), b.control.minus(j));
        }
        prop_assert_eq!(a.tau_step.min(k), b.tau_step.min(k));
    }

    #[test]
    fn finite_fuel_is_never_exceeded(seed in any::<u64>(), zbar in 0.0f64..1.0, z0 in 0.0f64..1.0) {
        let spec = fuel_spec(zbar);
        let z0 = z0 * zbar;
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let b = simulate_paths(&spec, &FnPolicy(noisy), &[0.0], z0, grid, 30, seed).unwrap();
        for p in &b.paths {
            prop_assert!(p.fuel.iter().all(|&z| z <= zbar * (1.0 + 1e-12) + 1e-12));
        }
    }

    #[test]
    fn gamma_equals_lambda_and_m_freezes(seed in any::<u64>()) {
        let spec = fuel_spec(1.0);
        let grid = TimeGrid::new(0.0, 1.0, 12).unwrap();
        let b = simulate_paths(&spec, &FnPolicy(noisy), &[0.0], 0.0, grid, 40, seed).unwrap();
        for p in &b.paths {
            let end = p.end_step();
            for u in 0..=end {
                let (g, l) = (evaluate_gamma(&spec, p, u).unwrap(), evaluate_lambda(&spec, p, u).unwrap());
                prop_assert!((g - l).abs() <= 1e-12, "u={} Γ={} Λ={}", u, g, l);
            }
        }
        let m = compute_m(&spec, &b, &Quadratic, false).unwrap();
        for (p, t) in b.paths.iter().zip(&m.paths) {
            let end = p.end_step();
            for u in end + 1..=grid.n_steps {
                prop_assert_eq!(t.m[u], t.m[end + 1]);
            }
        }
    }

    #[test]
    fn cost_is_additive_and_split_invariant(seed in any::<u64>(), k in 0usize..11, cut in 0usize..13) {
        let spec = ProblemSpec::builder(dims1(), 1.0)
            .diffusion(|_, _, _, o| o[0] = 0.5)
            .constant_costs(vec![0.4], vec![0.9])
            .build();
        let grid = TimeGrid::new(0.0, 1.0, 12).unwrap();
        let noise = path_noise(&grid, 1, seed, 0, NoiseOptions::default());
        let xi = random_bv(12, 1, seed);
        let eta = tau_to_eta(12, grid).unwrap();
        let p = integrate_treble(&spec, grid, noise.clone(), &[0.0], 0.0, xi.clone(), eta, vec![0; 12], 0).unwrap();
        let whole = cost_integral(&spec, &p, 12).unwrap();
        let cut = cut.min(12);
        let split = cost_window(&spec, &p, 0, cut).unwrap() + cost_window(&spec, &p, cut, 12).unwrap();
        prop_assert!((whole - split).abs() <= 1e-12 * whole.max(1.0));
        // Move half of step k's increment to step k + 1.
        let mut halves = xi.clone();
        let (pk, mk) = (xi.plus(k)[0] / 2.0, xi.minus(k)[0] / 2.0);
        halves.set(k, &[pk], &[mk]).unwrap();
        halves.set(k + 1, &[xi.plus(k + 1)[0] + pk], &[xi.minus(k + 1)[0] + mk]).unwrap();
        let q = integrate_treble(&spec, grid, noise, &[0.0], 0.0, halves, eta, vec![0; 12], 0).unwrap();
        let again = cost_integral(&spec, &q, 12).unwrap();
        prop_assert!((whole - again).abs() <= 1e-12 * whole.max(1.0));
    }

    #[test]
    fn segment_integral_approaches_stieltjes(x in -1.0f64..1.0, h in 0.001f64..0.1) {
        let make = |conv| {
            ProblemSpec::builder(dims1(), 1.0)
                .cost_plus(|_, x, o| o[0] = x[0].exp())
                .cost_minus(|_, x, o| o[0] = x[0].exp())
                .cost_convention(conv)
                .build()
        };
        let stj = make(CostConvention::Stieltjes);
        let seg = make(CostConvention::SegmentIntegral { quadrature_steps: 50 });
        let mut buf = CostScratch::new(1);
        let mut gap = |h: f64| {
            jump_cost(&seg, 0.0, &[x], &[h], &[0.0], &mut buf).unwrap()
                - jump_cost(&stj, 0.0, &[x], &[h], &[0.0], &mut buf).unwrap()
        };
        let (g1, g2) = (gap(h), gap(h / 2.0));
        prop_assert!(g1 > 0.0 && g1 <= 0.6 * x.exp() * h * h);
        prop_assert!(g2 <= 0.3 * g1);
    }

    #[test]
    fn oracle_matches_backward_induction(seed in 0u64..10_000) {
        let g = random_small_instance(seed);
        let spec = g.spec().unwrap();
        let sol = solve(&spec, &g.lattice, &SolveOptions::default()).unwrap();
        let lat = &sol.lattice;
        let (s0, _) = lat.locate(&g.x0);
        let o = brute_force_value(lat, &sol.transitions, 0, s0).unwrap();
        prop_assert!((o.value - sol.field.at(lat, 0, 0, s0)).abs() <= 1e-12);
    }

    #[test]
    fn solved_fields_obey_lattice_invariants(seed in 0u64..10_000) {
        let g = random_small_instance(seed);
        let spec = g.spec().unwrap();
        let sol = solve(&spec, &g.lattice, &SolveOptions::default()).unwrap();
        let lat = &sol.lattice;
        let (r, _) = one_step_residuals(lat, &sol.transitions, &sol.field).unwrap();
        prop_assert!(r <= 1e-12);
        let cont = |_: usize, _: usize, _: usize| NodeDecision::Continue { action: 0 };
        let floor = evaluate_policy(lat, &sol.transitions, &cont).unwrap();
        for node in 0..lat.n_nodes() {
            let (k, j, s) = lat.split(node);
            let v = sol.field.values[node];
            let (t, x, z) = (lat.grid.time(k), lat.x(s), lat.z(j));
            prop_assert!(v >= floor[node] - 1e-12);
            if k == lat.n_steps() || lat.is_exterior(j, s) {
                prop_assert_eq!(v, spec.exit_gain_at(t, x, z));
            } else {
                prop_assert!(v >= spec.stop_gain_at(t, x, z) - 1e-12);
                if j + 1 < lat.n_fuel() {
                    prop_assert!(sol.field.at(lat, k, j + 1, s) <= v + 1e-12);
                }
            }
        }
    }

    #[test]
    fn pasted_policies_stay_within_fuel(seed in any::<u64>(), u in 0usize..12) {
        let spec = fuel_spec(1.0);
        let grid = TimeGrid::new(0.0, 1.0, 12).unwrap();
        let bin = |lo: f64, hi: f64, zlo: f64, zhi: f64| Bin {
            x_lo: vec![lo],
            x_hi: vec![hi],
            z_lo: zlo,
            z_hi: zhi,
            rep_x: vec![(lo + hi) / 2.0],
            rep_z: zhi,
        };
        let scheme = PartitionScheme::new(vec![
            bin(-2.0, 0.0, -1.0, 0.5),
            bin(0.0, 2.0, -1.0, 0.5),
            bin(-2.0, 2.0, 0.5, 1.0),
        ])
        .unwrap();
        let greedy = |_: usize, _: NoiseView<'_>, _: Option<StateView<'_>>| Decision::exert(0, vec![0.2], vec![0.1]);
        let pols = vec![FnPolicy(greedy), FnPolicy(greedy), FnPolicy(greedy)];
        let pasted = concatenate_policies(FnPolicy(noisy), u, scheme, pols, Some(1.0)).unwrap();
        let b = simulate_paths(&spec, &pasted, &[0.0], 0.0, grid, 30, seed).unwrap();
        for p in &b.paths {
            let after = total_variation(&p.control, u, grid.n_steps).unwrap();
            prop_assert!(after <= (1.0 - p.z(u)) * (1.0 + 1e-12) + 1e-12);
        }
    }
}

#[test]
fn simulation_is_deterministic_across_thread_counts() {
    let spec = fuel_spec(1.0);
    let grid = TimeGrid::new(0.0, 1.0, 16).unwrap();
    let run = || simulate_paths(&spec, &FnPolicy(noisy), &[0.0], 0.0, grid, 300, 5).unwrap();
    let one = par::with_threads(1, run);
    let four = par::with_threads(4, run);
    assert_eq!(one, four);
    assert_eq!(run(), run());
}
