//! The four run modes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::mem::discriminant;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use fuelgrid::controls::{ConstantPolicy, NoiseFunctionalPolicy, StopAtStep, TimeGrid};
use fuelgrid::gallery::{self, GalleryInstance};
use fuelgrid::par;
use fuelgrid::payoff::{compute_m, estimate_j};
use fuelgrid::problem::ProblemSpec;
use fuelgrid::simulate::{simulate_paths_with, write_bundle_csv, PathBundle, SimOptions};
use fuelgrid::solver::{
    read_field_binary, refinement_study, solve, write_field_binary, write_field_csv, LatticeFeedback, LatticeValues,
    PolicyField, SliceStats, Solution, ValueField,
};
use fuelgrid::stats::Estimate;
use fuelgrid::verify::{run_suite, ReportMetadata, SuiteOptions};

use crate::config::{load_config, Mode, PolicySource, RunConfig};
use crate::Common;

fn g(v: f64) -> String {
    format!("{v:?}")
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("output: cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn tag<T>(module: &'static str, r: fuelgrid::Result<T>) -> Result<T> {
    r.map_err(|e| anyhow!("{module}: {e}"))
}

/// Runs `mode`; `Ok(false)` means the run completed but a check failed.
pub fn run(mode: Mode, common: &Common) -> Result<bool> {
    let cfg = load_config(&common.config)?;
    cfg.require(mode)?;
    if let Some(t) = common.threads.or(cfg.threads) {
        par::set_thread_cap(t);
    }
    let seed = common.seed.or(cfg.seed).unwrap_or(0);
    let out = match (&common.out, &cfg.output) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => cfg.base_dir.join(o),
        (None, None) => PathBuf::from("out"),
    };
    fs::create_dir_all(&out).with_context(|| format!("output: cannot create {}", out.display()))?;
    match mode {
        Mode::Solve => solve_mode(&cfg, &out).map(|_| true),
        Mode::Simulate => simulate_mode(&cfg, &out, seed).map(|_| true),
        Mode::Verify => verify_mode(&cfg, &out, seed),
        Mode::Bench => bench_mode(&cfg, &out, seed).map(|_| true),
    }
}

fn solve_problem(cfg: &RunConfig) -> Result<Solution> {
    let lattice = cfg.lattice.as_ref().ok_or_else(|| anyhow!("config: missing field `lattice`"))?;
    tag("solver", solve(&cfg.problem().spec, lattice, &cfg.solver))
}

#[derive(Serialize)]
struct Convergence<'a> {
    problem: &'a str,
    fingerprint: String,
    n_steps: usize,
    n_fuel: usize,
    n_states: usize,
    shrinks: usize,
    value_at_start: f64,
    max_iterations: usize,
    max_final_change: f64,
    slices: &'a [SliceStats],
}

fn solve_mode(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sol = solve_problem(cfg)?;
    let lat = &sol.lattice;
    let x0 = cfg.x0.as_deref().unwrap_or_default();

    let mut w = create(out, "value.csv")?;
    tag("solver", write_field_csv(lat, &sol.field, Some(&sol.policy), &mut w))?;
    w.flush()?;
    let mut w = create(out, "field.fgvf")?;
    tag("solver", write_field_binary(lat, &sol.field, Some(&sol.policy), &mut w))?;
    w.flush()?;
    write_boundary(&sol, out)?;

    let slices = &sol.field.slices;
    let conv = Convergence {
        problem: &lat.spec.name,
        fingerprint: format!("{:016x}", sol.field.fingerprint),
        n_steps: lat.n_steps(),
        n_fuel: lat.n_fuel(),
        n_states: lat.n_states(),
        shrinks: lat.shrinks,
        value_at_start: sol.value_at(x0, cfg.z0),
        max_iterations: slices.iter().map(|s| s.iterations).max().unwrap_or(0),
        max_final_change: slices.iter().map(|s| s.final_change).fold(0.0, f64::max),
        slices,
    };
    write_json(out, "convergence.json", &conv)
}

/// Nodes whose decision kind differs from an interior neighbour's along
/// some coordinate, on every slice before the terminal one.
fn write_boundary(sol: &Solution, out: &Path) -> Result<()> {
    let lat = &sol.lattice;
    let d = lat.dim();
    let mut wr = csv::Writer::from_writer(create(out, "boundary.csv")?);
    let mut header = vec!["step".to_string(), "time".into(), "fuel_index".into(), "z".into(), "state".into()];
    header.extend((0..d).map(|i| format!("x{i}")));
    header.extend(["coord".into(), "decision".into(), "neighbour".into()]);
    wr.write_record(&header)?;
    let decision = |k, j, s| sol.policy.decisions[lat.node(k, j, s)];
    for k in 0..lat.n_steps() {
        for j in 0..lat.n_fuel() {
            for s in 0..lat.n_states() {
                if lat.is_ghost(s) || lat.is_exterior(j, s) {
                    continue;
                }
                let here = decision(k, j, s);
                for i in 0..d {
                    let Some(nb) = lat.neighbor(s, i, true) else { continue };
                    if lat.is_ghost(nb) || lat.is_exterior(j, nb) {
                        continue;
                    }
                    let there = decision(k, j, nb);
                    if discriminant(&here) == discriminant(&there) {
                        continue;
                    }
                    let mut row = vec![k.to_string(), g(lat.grid.time(k)), j.to_string(), g(lat.z(j)), s.to_string()];
                    row.extend(lat.x(s).iter().map(|&v| g(v)));
                    row.extend([i.to_string(), here.label(), there.label()]);
                    wr.write_record(&row)?;
                }
            }
        }
    }
    wr.flush()?;
    Ok(())
}

/// Solution whose policy (and values) come from a saved snapshot.
fn load_snapshot(cfg: &RunConfig, path: &Path) -> Result<Solution> {
    let mut sol = solve_problem(cfg)?;
    let path = cfg.base_dir.join(path);
    let f = File::open(&path).with_context(|| format!("policy: cannot open {}", path.display()))?;
    let snap = tag("policy", read_field_binary(std::io::BufReader::new(f)))?;
    let want = sol.lattice.fingerprint();
    if snap.fingerprint != want || snap.values.len() != sol.lattice.n_nodes() {
        bail!(
            "policy: {} was written for lattice {:016x}, the config builds {:016x}",
            path.display(),
            snap.fingerprint,
            want
        );
    }
    let decisions = snap
        .decisions
        .ok_or_else(|| anyhow!("policy: {} holds no decisions", path.display()))?;
    sol.policy = PolicyField {
        decisions,
        fingerprint: snap.fingerprint,
    };
    sol.field = ValueField {
        values: snap.values,
        slices: Vec::new(),
        fingerprint: snap.fingerprint,
    };
    Ok(sol)
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    problem: &'a str,
    policy: String,
    seed: u64,
    n_paths: usize,
    n_steps: usize,
    x0: &'a [f64],
    z0: f64,
    estimate: Estimate,
    /// Lattice value at the start, for lattice policies.
    lattice_value: Option<f64>,
}

fn simulate_mode(cfg: &RunConfig, out: &Path, seed: u64) -> Result<()> {
    let spec = &cfg.problem().spec;
    let x0 = cfg.x0.as_deref().unwrap_or_default();
    let sim = &cfg.simulation;
    let opts = SimOptions { noise: sim.noise };
    let sol = match &cfg.policy {
        PolicySource::Extracted => Some(solve_problem(cfg)?),
        PolicySource::File(p) => Some(load_snapshot(cfg, p)?),
        _ => None,
    };
    let grid = match (sim.n_steps, &sol) {
        (None, Some(s)) => s.lattice.grid,
        (n, _) => tag("simulate", TimeGrid::new(spec.start_t, spec.horizon, n.unwrap_or(1)))?,
    };
    let feedback = sol.as_ref().map(|s| LatticeFeedback {
        lattice: &s.lattice,
        policy: &s.policy,
        grid,
    });
    let (policy, label): (Box<dyn NoiseFunctionalPolicy + '_>, String) = match (&cfg.policy, feedback) {
        (PolicySource::Constant { action }, _) => (Box::new(ConstantPolicy { action: *action }), format!("constant:{action}")),
        (PolicySource::StopAt { step, action }, _) => (
            Box::new(StopAtStep {
                step: *step,
                action: *action,
            }),
            format!("stop_at:{step}"),
        ),
        (PolicySource::Extracted, Some(f)) => (Box::new(f), "extracted".into()),
        (PolicySource::File(p), Some(f)) => (Box::new(f), format!("file:{}", p.display())),
        _ => unreachable!("lattice policies come with a solution"),
    };
    if let PolicySource::Constant { action } | PolicySource::StopAt { action, .. } = cfg.policy {
        if action >= spec.action_set.len() {
            bail!("config: policy action {action} out of range ({} actions)", spec.action_set.len());
        }
    }

    let estimate = tag("simulate", estimate_j(spec, &*policy, x0, cfg.z0, grid, sim.n_paths, seed, opts))?;
    let kept = sim.write_paths.min(sim.n_paths);
    let bundle: PathBundle = tag("simulate", simulate_paths_with(spec, &*policy, x0, cfg.z0, grid, kept, seed, opts))?;
    let mut w = create(out, "paths.csv")?;
    tag("simulate", write_bundle_csv(&bundle, &mut w))?;
    w.flush()?;

    if let Some(s) = &sol {
        if kept > 0 {
            let values = LatticeValues {
                lattice: &s.lattice,
                field: &s.field,
                grid,
            };
            let trace = tag("payoff", compute_m(spec, &bundle, &values, true))?;
            let mut w = create(out, "m_trace.csv")?;
            tag("payoff", trace.write_csv(&mut w))?;
            w.flush()?;
        }
    }

    let report = EstimateReport {
        problem: &spec.name,
        policy: label,
        seed,
        n_paths: sim.n_paths,
        n_steps: grid.n_steps,
        x0,
        z0: cfg.z0,
        estimate,
        lattice_value: sol.as_ref().map(|s| s.value_at(x0, cfg.z0)),
    };
    write_json(out, "estimate.json", &report)
}

fn verify_mode(cfg: &RunConfig, out: &Path, seed: u64) -> Result<bool> {
    let opts = SuiteOptions {
        lattice: cfg.lattice.clone().ok_or_else(|| anyhow!("config: missing field `lattice`"))?,
        solve: cfg.solver,
        x0: cfg.x0.clone().unwrap_or_default(),
        z0: cfg.z0,
        n_paths: cfg.verify.n_paths,
        random_policies: cfg.verify.random_policies,
        seed,
        tolerances: cfg.verify.tolerances,
    };
    let mut report = tag("verify", run_suite(&cfg.problem().spec, &opts))?;
    report.stamp();
    let mut w = create(out, "report.json")?;
    tag("verify", report.write_json(&mut w))?;
    writeln!(w)?;
    w.flush()?;
    fs::write(out.join("report.txt"), report.table()).context("output: cannot write report.txt")?;
    print!("{}", report.table());
    Ok(report.passed)
}

#[derive(Serialize)]
struct BenchRow {
    instance: String,
    nodes: usize,
    value: f64,
    mc_mean: f64,
    mc_std_error: f64,
}

#[derive(Serialize)]
struct BenchReport {
    seed: u64,
    n_paths: usize,
    levels: usize,
    instances: Vec<BenchRow>,
    metadata: ReportMetadata,
}

fn bench_instances(cfg: &RunConfig) -> Result<Vec<GalleryInstance>> {
    match &cfg.bench.instances {
        None => Ok(gallery::gallery()),
        Some(names) => names
            .iter()
            .map(|n| gallery::by_name(n).ok_or_else(|| anyhow!("config: unknown gallery instance `{n}`")))
            .collect(),
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn bench_mode(cfg: &RunConfig, out: &Path, seed: u64) -> Result<()> {
    let n_paths = cfg.simulation.n_paths;
    let levels = cfg.bench.levels.max(1);
    let mut rows = Vec::new();
    let mut meta = ReportMetadata::default();
    let mut refine = csv::Writer::from_writer(create(out, "refinement.csv")?);
    refine.write_record(["instance", "level", "h", "dt", "n_steps", "value"])?;
    for inst in bench_instances(cfg)? {
        let name = inst.name().to_string();
        let spec: ProblemSpec = tag("problem", inst.spec())?;
        let t = Instant::now();
        let sol = tag("solver", solve(&spec, &inst.lattice, &cfg.solver))?;
        meta.runtimes_ms.insert(format!("{name}.solve"), ms_since(t));
        let t = Instant::now();
        let est = tag(
            "simulate",
            estimate_j(&spec, &sol.feedback(), &inst.x0, inst.z0, sol.lattice.grid, n_paths, seed, SimOptions::default()),
        )?;
        meta.runtimes_ms.insert(format!("{name}.simulate"), ms_since(t));
        let t = Instant::now();
        let study = tag("solver", refinement_study(&spec, &inst.lattice, &cfg.solver, levels, &inst.x0, inst.z0))?;
        meta.runtimes_ms.insert(format!("{name}.refine"), ms_since(t));
        for (i, r) in study.iter().enumerate() {
            refine.write_record([name.clone(), i.to_string(), g(r.h), g(r.dt), r.n_steps.to_string(), g(r.value)])?;
        }
        rows.push(BenchRow {
            instance: name,
            nodes: sol.lattice.n_nodes(),
            value: sol.value_at(&inst.x0, inst.z0),
            mc_mean: est.mean,
            mc_std_error: est.std_error,
        });
    }
    refine.flush()?;

    let mut wr = csv::Writer::from_writer(create(out, "bench.csv")?);
    wr.write_record(["instance", "nodes", "value", "mc_mean", "mc_std_error"])?;
    for r in &rows {
        wr.write_record([r.instance.clone(), r.nodes.to_string(), g(r.value), g(r.mc_mean), g(r.mc_std_error)])?;
    }
    wr.flush()?;

    meta.threads = par::current_threads();
    meta.timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let report = BenchReport {
        seed,
        n_paths,
        levels,
        instances: rows,
        metadata: meta,
    };
    write_json(out, "bench.json", &report)
}
