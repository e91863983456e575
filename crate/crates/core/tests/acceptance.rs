//! Acceptance suite. Runs every criterion, prints one line per criterion
//! and exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fuelgrid::controls::{
    eta_to_tau, eta_to_tau_step, tau_to_eta, total_variation, truncate_control, BVControlPath, EtaPath, TimeGrid,
    TruncationMode,
};
use fuelgrid::gallery::{gallery, lipschitz_1d, oracle_instance, random_small_instance, GalleryInstance};
use fuelgrid::payoff::{estimate_j, evaluate_gamma, evaluate_lambda, jump_cost, CostScratch};
use fuelgrid::problem::{CostConvention, Dims, ProblemSpec};
use fuelgrid::simulate::{simulate_paths, SimOptions};
use fuelgrid::solver::{
    random_policy, refinement_study, solve, LatticeOptions, LatticePolicy, NodeDecision, PolicyField, Solution, SolveOptions,
};
use fuelgrid::verify::{
    brute_force_value, check_concatenation, check_dpp, check_reference_invariance, check_supermartingale_exact,
    near_optimal_bin_policies, one_step_residuals, DppMode, Horizon, InvarianceOptions, PartitionScheme,
};

type Outcome = (bool, String);

fn solved(g: &GalleryInstance) -> (ProblemSpec, Solution) {
    let spec = g.spec().expect("gallery instance builds");
    let sol = solve(&spec, &g.lattice, &SolveOptions::default()).expect("gallery instance solves");
    (spec, sol)
}

fn root(sol: &Solution, g: &GalleryInstance) -> (usize, usize) {
    let (s, _) = sol.lattice.locate(&g.x0);
    let (j, _) = sol.lattice.locate_fuel(g.z0);
    (j, s)
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut instances: Vec<GalleryInstance> = (0..24).map(random_small_instance).collect();
    instances.push(oracle_instance());
    for g in &instances {
        let (_, sol) = solved(g);
        let lat = &sol.lattice;
        for s in 0..lat.n_states() {
            for j in 0..lat.n_fuel() {
                let o = brute_force_value(lat, &sol.transitions, j, s).expect("oracle within guard");
                worst = worst.max((o.value - sol.field.at(lat, 0, j, s)).abs());
                count += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst <= 1e-12 && secs < 60.0,
        format!(
            "{} instances, {count} roots, max |solve - oracle| = {worst:.2e} (tol 1e-12), {secs:.2} s (limit 60 s)",
            instances.len()
        ),
    )
}

fn one_step_dpp() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut nodes = 0;
    for g in gallery().iter().chain([&oracle_instance()]) {
        let (_, sol) = solved(g);
        let lat = &sol.lattice;
        let (r, _) = one_step_residuals(lat, &sol.transitions, &sol.field).expect("residuals");
        worst = worst.max(r);
        nodes += (0..lat.n_nodes())
            .filter(|&node| {
                let (k, j, s) = lat.split(node);
                k < lat.n_steps() && !lat.is_exterior(j, s)
            })
            .count();
    }
    (worst <= 1e-12, format!("{nodes} interior nodes, max residual {worst:.2e} (tol 1e-12)"))
}

fn hitting_rules(sol: &Solution) -> Vec<Horizon> {
    let lat = &sol.lattice;
    let ax = &lat.axes[0];
    let mut out = Vec::new();
    for i in 1..=ax.n {
        let level = ax.coord(i);
        out.push(Horizon::first_coordinate_above(lat, level));
        out.push(Horizon::Hitting {
            marked: (0..lat.n_nodes())
                .map(|node| {
                    let (k, _, s) = lat.split(node);
                    lat.x(s)[0] <= level && k > 0
                })
                .collect(),
        });
    }
    out
}

fn stopping_time_dpp() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    let mut instances: Vec<GalleryInstance> = (100..110).map(random_small_instance).collect();
    instances.push(oracle_instance());
    for g in &instances {
        let (_, sol) = solved(g);
        let (j0, s0) = root(&sol, g);
        for h in hitting_rules(&sol) {
            let r = check_dpp(&sol.lattice, &sol.transitions, &sol.field, j0, s0, &h, DppMode::Exact).expect("exact DPP");
            worst = worst.max(r.residual);
            checks += 1;
        }
    }
    (
        worst <= 1e-9,
        format!("{} instances, {checks} hitting rules, max residual {worst:.2e} (tol 1e-9)", instances.len()),
    )
}

fn supermartingale() -> Outcome {
    let mut worst_violation = f64::NEG_INFINITY;
    let mut worst_gap: f64 = 0.0;
    let mut all = true;
    let instances: Vec<GalleryInstance> = gallery().into_iter().chain([oracle_instance()]).collect();
    for g in &instances {
        let (_, sol) = solved(g);
        let lat = &sol.lattice;
        let pols: Vec<PolicyField> = (0..100).map(|i| random_policy(lat, 7000 + i)).collect();
        let pairs: Vec<_> = pols.iter().map(|p| (lat, p)).collect();
        let dyns: Vec<&dyn LatticePolicy> = pairs.iter().map(|p| p as &dyn LatticePolicy).collect();
        let r = check_supermartingale_exact(lat, &sol.transitions, &sol.field, &dyns, Some(&(lat, &sol.policy)), 1e-12)
            .expect("exact martingale check");
        worst_violation = worst_violation.max(r.max_violation);
        worst_gap = worst_gap.max(r.optimal_gap.unwrap_or(0.0));
        all &= r.passed;
    }
    (
        all,
        format!(
            "{} instances x 100 policies, max E[M_s|u] - M_u = {worst_violation:.2e}, optimal |gap| = {worst_gap:.2e} (tol 1e-12)",
            instances.len()
        ),
    )
}

fn gamma_lambda() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut paths = 0;
    for g in gallery() {
        let (spec, sol) = solved(&g);
        let b = simulate_paths(&spec, &sol.feedback(), &g.x0, g.z0, sol.lattice.grid, 10_000, 11).expect("simulate");
        for p in &b.paths {
            worst = worst.max((evaluate_gamma(&spec, p, 0).unwrap() - evaluate_lambda(&spec, p, 0).unwrap()).abs());
        }
        paths += b.paths.len();
    }
    (worst <= 1e-12, format!("{paths} paths, max |Γ - Λ| = {worst:.2e} (tol 1e-12)"))
}

fn reference_invariance() -> Outcome {
    let mut lines = Vec::new();
    let mut all = true;
    for g in gallery().into_iter().filter(|g| g.is_stochastic()) {
        let (spec, sol) = solved(&g);
        let r = check_reference_invariance(
            &spec,
            &sol.feedback(),
            &g.x0,
            g.z0,
            sol.lattice.grid,
            100_000,
            (21, 22),
            InvarianceOptions::default(),
        )
        .expect("invariance");
        let ks = r.ks.iter().map(|k| k.statistic / k.critical).fold(0.0, f64::max);
        lines.push(format!(
            "{}: |ΔJ|/SE = {:.2}, max KS/crit = {ks:.2}",
            g.name(),
            (r.j1.mean - r.j2.mean).abs() / r.combined_se.max(f64::MIN_POSITIVE)
        ));
        all &= r.passed;
    }
    (all, format!("1e5 paths per instance; {}", lines.join("; ")))
}

fn simulator_solver_consistency() -> Outcome {
    let g = lipschitz_1d();
    let spec = g.spec().unwrap();
    let opts = SolveOptions::default();
    let rows = refinement_study(&spec, &g.lattice, &opts, 4, &g.x0, g.z0).expect("refinement");
    let diffs: Vec<f64> = rows.windows(2).map(|w| (w[0].value - w[1].value).abs()).collect();
    let shrinking = diffs.windows(2).all(|w| w[1] < w[0]);
    // First-order error: |v_h - v| <= 2 |v_h - v_{h/2}| under geometric halving.
    let c = rows
        .windows(2)
        .map(|w| 2.0 * (w[0].value - w[1].value).abs() / (w[0].h + w[0].dt))
        .fold(0.0, f64::max);
    let mut ok = shrinking;
    let mut parts = Vec::new();
    for (i, row) in rows.iter().take(3).enumerate() {
        let lo = LatticeOptions {
            bounds: g.lattice.bounds.clone(),
            points: g.lattice.points.iter().map(|p| ((p - 1) << i) + 1).collect(),
            n_steps: row.n_steps,
            auto_shrink: false,
        };
        let sol = solve(&spec, &lo, &opts).unwrap();
        let j = estimate_j(&spec, &sol.feedback(), &g.x0, g.z0, sol.lattice.grid, 50_000, 31, SimOptions::default())
            .unwrap();
        let gap = (j.mean - row.value).abs();
        let allowed = 3.0 * j.std_error + c * (row.h + row.dt);
        ok &= gap <= allowed;
        parts.push(format!("h={}: |J - v| = {gap:.4} <= {allowed:.4}", row.h));
    }
    (
        ok,
        format!(
            "C = {c:.3}; refinement diffs {:?} strictly shrinking = {shrinking}; {}",
            diffs.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>(),
            parts.join(", ")
        ),
    )
}

fn eta_and_truncation() -> Outcome {
    let mut trips = 0usize;
    let mut ok = true;
    for e in 0..=12 {
        let n = 1usize << e;
        let grid = TimeGrid::new(0.0, 1.0, n).unwrap();
        for k in 0..=n {
            let eta = tau_to_eta(k, grid).unwrap();
            ok &= eta_to_tau_step(&eta) == k && eta_to_tau(&eta) == grid.time(k);
            ok &= tau_to_eta(eta_to_tau_step(&eta), grid).unwrap() == eta;
            trips += 1;
        }
        ok &= eta_to_tau_step(&EtaPath::never(grid)) == n;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_clip: f64 = 0.0;
    for _ in 0..10_000 {
        let n = rng.random_range(1..40usize);
        let d = rng.random_range(1..4usize);
        let grid = TimeGrid::new(0.0, 1.0, n).unwrap();
        let mut draw = || if rng.random_bool(0.4) { rng.random_range(0.0..1.0) } else { 0.0 };
        let plus: Vec<f64> = (0..n * d).map(|_| draw()).collect();
        let minus: Vec<f64> = (0..n * d).map(|_| draw()).collect();
        let xi = BVControlPath::from_increments(grid, d, plus, minus).unwrap();
        let from = rng.random_range(0..=n);
        let total = total_variation(&xi, from, n).unwrap();
        let budget = rng.random_range(0.0..1.2) * total.max(0.1);
        let strict = truncate_control(&xi, from, budget, TruncationMode::Strict).unwrap();
        let clip = truncate_control(&xi, from, budget, TruncationMode::Clip).unwrap();
        ok &= total_variation(&strict, from, n).unwrap() <= budget * (1.0 + 1e-12) + 1e-12;
        let c = total_variation(&clip, from, n).unwrap();
        let want = total.min(budget);
        worst_clip = worst_clip.max((c - want).abs() / want.max(1.0));
    }
    ok &= worst_clip <= 1e-12;
    (
        ok,
        format!("{trips} η/τ round trips up to 2^12 steps; 10^4 random paths, max |Clip - min| = {worst_clip:.2e}"),
    )
}

fn cost_conventions() -> Outcome {
    let dims = Dims {
        state: 2,
        noise: 2,
        action: 1,
    };
    let seg = CostConvention::SegmentIntegral { quadrature_steps: 1000 };
    let constant = |conv| {
        ProblemSpec::builder(dims, 1.0)
            .constant_costs(vec![0.7, 0.7], vec![0.3, 0.3])
            .cost_convention(conv)
            .build()
    };
    let (stj, sgi) = (constant(CostConvention::Stieltjes), constant(seg));
    let linear = ProblemSpec::builder(dims, 1.0)
        .cost_plus(|_, x, o| o.fill(x[0] + x[1]))
        .cost_minus(|_, x, o| o.fill(x[0] + x[1]))
        .uniform_costs(true)
        .cost_convention(seg)
        .build();
    let square = ProblemSpec::builder(dims, 1.0)
        .cost_plus(|_, x, o| o.fill((x[0] + x[1]).powi(2)))
        .cost_minus(|_, x, o| o.fill((x[0] + x[1]).powi(2)))
        .uniform_costs(true)
        .cost_convention(seg)
        .build();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut buf = CostScratch::new(2);
    let (mut w_const, mut w_lin, mut w_sq): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..1000 {
        let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let p = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let m = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let t = rng.random_range(0.0..1.0);
        let a = jump_cost(&stj, t, &x, &p, &m, &mut buf).unwrap();
        let b = jump_cost(&sgi, t, &x, &p, &m, &mut buf).unwrap();
        w_const = w_const.max((a - b).abs());
        // Along each leg the cost depends on s = x0 + x1, which moves at unit
        // speed: up by lp on the first leg, down by lm on the second.
        let (s0, lp, lm) = (x[0] + x[1], p[0] + p[1], m[0] + m[1]);
        let s1 = s0 + lp;
        let lin = (s0 * lp + lp * lp / 2.0) + (s1 * lm - lm * lm / 2.0);
        let sq = (s1.powi(3) - s0.powi(3)) / 3.0 + (s1.powi(3) - (s1 - lm).powi(3)) / 3.0;
        w_lin = w_lin.max((jump_cost(&linear, t, &x, &p, &m, &mut buf).unwrap() - lin).abs());
        w_sq = w_sq.max((jump_cost(&square, t, &x, &p, &m, &mut buf).unwrap() - sq).abs());
    }
    (
        w_const <= 1e-12 && w_lin <= 1e-9 && w_sq <= 1e-9,
        format!("constant {w_const:.2e} (tol 1e-12), c=x {w_lin:.2e}, c=x^2 {w_sq:.2e} (tol 1e-9), 1000 panels"),
    )
}

fn concatenation() -> Outcome {
    let g = oracle_instance();
    let (_, sol) = solved(&g);
    let lat = &sol.lattice;
    let (j0, s0) = root(&sol, &g);
    let scheme = PartitionScheme::lattice_blocks(lat, 2, 1).unwrap();
    // A random policy that never stops before u, so the pasting is exercised.
    let u = 2;
    let random = random_policy(lat, 77);
    let base = |k: usize, j: usize, s: usize| match (lat, &random).decide(k, j, s) {
        NodeDecision::Stop if k < u => NodeDecision::Continue { action: 0 },
        d => d,
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for m in [10.0, 100.0] {
        let bins =
            near_optimal_bin_policies(lat, &sol.transitions, &sol.field, &sol.policy, u, &scheme, m, 40, 5).unwrap();
        let r = check_concatenation(
            lat,
            &sol.transitions,
            &sol.field,
            &base,
            &bins,
            u,
            &scheme,
            m,
            j0,
            s0,
            100_000,
            13,
        )
        .unwrap();
        ok &= r.passed && r.admissible;
        parts.push(format!(
            "m={m}: J = {:.4}, rhs = {:.4}, diff = {:.4} >= -{:.4} (ε = {:.4}), admissible = {}",
            r.pasted.mean, r.rhs.mean, r.difference.mean, r.allowance, r.epsilon, r.admissible
        ));
    }
    (ok, parts.join("; "))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("one-step DPP residual", one_step_dpp),
        ("DPP at stopping times", stopping_time_dpp),
        ("supermartingale / martingale", supermartingale),
        ("Γ = Λ identity", gamma_lambda),
        ("reference-system invariance", reference_invariance),
        ("simulator / solver consistency", simulator_solver_consistency),
        ("η/τ round trips and truncation", eta_and_truncation),
        ("cost conventions", cost_conventions),
        ("concatenation lower bound", concatenation),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        failed += !ok as usize;
        println!(
            "criterion {:>2} {:<32} {} ({:.1} s) {detail}",
            i + 1,
            name,
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
