//! Run configuration files.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use fuelgrid::gallery::{self, GalleryInstance};
use fuelgrid::problem::{load_problem, ProblemConfig, ProblemSpec};
use fuelgrid::simulate::NoiseOptions;
use fuelgrid::solver::{LatticeOptions, SolveOptions};
use fuelgrid::verify::Tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Solve,
    Simulate,
    Verify,
    Bench,
}

/// Where the simulated policy comes from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySource {
    /// Greedy policy of the solved lattice.
    #[default]
    Extracted,
    /// Never stops, always plays one action.
    Constant { action: usize },
    /// Stops at a fixed step, playing `action` before.
    StopAt {
        step: usize,
        #[serde(default)]
        action: usize,
    },
    /// Decisions from a binary field snapshot written by `solve`.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub n_paths: usize,
    /// Simulation steps; defaults to the lattice's.
    pub n_steps: Option<usize>,
    pub noise: NoiseOptions,
    /// Paths written to `paths.csv` (all of them are simulated).
    pub write_paths: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            n_paths: 1000,
            n_steps: None,
            noise: NoiseOptions::default(),
            write_paths: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub n_paths: usize,
    pub random_policies: usize,
    pub tolerances: Tolerances,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            n_paths: 2000,
            random_policies: 100,
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Refinement levels per instance.
    pub levels: usize,
    /// Gallery instances to run; all when absent.
    pub instances: Option<Vec<String>>,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            levels: 3,
            instances: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig<'a> {
    #[serde(default)]
    mode: Option<Mode>,
    #[serde(borrow, default)]
    problem: Option<&'a RawValue>,
    #[serde(default)]
    lattice: Option<LatticeOptions>,
    #[serde(default)]
    x0: Option<Vec<f64>>,
    #[serde(default)]
    z0: Option<f64>,
    #[serde(default)]
    solver: SolveOptions,
    #[serde(default)]
    policy: PolicySource,
    #[serde(default)]
    simulation: SimulationSection,
    #[serde(default)]
    verify: VerifySection,
    #[serde(default)]
    bench: BenchSection,
    #[serde(default)]
    output: Option<PathBuf>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    threads: Option<usize>,
}

/// A loaded problem with the lattice and start point it came with, if any.
pub struct Problem {
    pub spec: ProblemSpec,
    pub lattice: Option<LatticeOptions>,
    pub x0: Option<Vec<f64>>,
    pub z0: Option<f64>,
}

pub struct RunConfig {
    pub mode: Option<Mode>,
    pub problem: Option<Problem>,
    pub lattice: Option<LatticeOptions>,
    pub x0: Option<Vec<f64>>,
    pub z0: f64,
    pub solver: SolveOptions,
    pub policy: PolicySource,
    pub simulation: SimulationSection,
    pub verify: VerifySection,
    pub bench: BenchSection,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    /// Directory relative paths in the file resolve against.
    pub base_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GalleryRef {
    gallery: String,
}

/// Line and column of byte `offset` in `text`, both 1-based.
fn position(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.bytes().filter(|&b| b == b'\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Rewrites a serde position inside `s` (a slice of `text`) in file terms.
fn in_file(text: &str, s: &str, e: &serde_json::Error) -> String {
    let offset = (s.as_ptr() as usize).saturating_sub(text.as_ptr() as usize);
    let (l0, c0) = position(text, offset);
    let (line, col) = if e.line() <= 1 {
        (l0, c0 + e.column().saturating_sub(1))
    } else {
        (l0 + e.line() - 1, e.column())
    };
    let msg = e.to_string();
    let msg = msg.rfind(" at line ").map_or(msg.as_str(), |i| &msg[..i]).to_string();
    format!("{msg} at line {line} column {col}")
}

fn parse_problem(text: &str, raw: &RawValue, base_dir: &Path) -> Result<Problem> {
    let s = raw.get();
    let located = |e: serde_json::Error| anyhow!("config: problem: {}", in_file(text, s, &e));
    if s.trim_start().starts_with('"') {
        let path: PathBuf = serde_json::from_str(s).map_err(located)?;
        let path = base_dir.join(path);
        let spec = load_problem(&path).map_err(|e| anyhow!("problem: {e}"))?;
        return Ok(Problem {
            spec,
            lattice: None,
            x0: None,
            z0: None,
        });
    }
    if let Ok(GalleryRef { gallery: name }) = serde_json::from_str::<GalleryRef>(s) {
        let g: GalleryInstance = gallery::by_name(&name)
            .or_else(|| (name == "oracle").then(gallery::oracle_instance))
            .ok_or_else(|| anyhow!("config: unknown gallery instance `{name}`"))?;
        return Ok(Problem {
            spec: g.spec().map_err(|e| anyhow!("problem: {e}"))?,
            lattice: Some(g.lattice),
            x0: Some(g.x0),
            z0: Some(g.z0),
        });
    }
    let cfg: ProblemConfig = serde_json::from_str(s).map_err(located)?;
    Ok(Problem {
        spec: cfg.build().map_err(|e| anyhow!("problem: {e}"))?,
        lattice: None,
        x0: None,
        z0: None,
    })
}

pub fn parse_config(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let raw: RawConfig<'_> = serde_json::from_str(text).map_err(|e| anyhow!("config: {e}"))?;
    let problem = raw.problem.map(|p| parse_problem(text, p, base_dir)).transpose()?;
    let (lattice, x0, z0) = match &problem {
        Some(p) => (
            raw.lattice.or_else(|| p.lattice.clone()),
            raw.x0.or_else(|| p.x0.clone()),
            raw.z0.or(p.z0),
        ),
        None => (raw.lattice, raw.x0, raw.z0),
    };
    Ok(RunConfig {
        mode: raw.mode,
        problem,
        lattice,
        x0,
        z0: z0.unwrap_or(0.0),
        solver: raw.solver,
        policy: raw.policy,
        simulation: raw.simulation,
        verify: raw.verify,
        bench: raw.bench,
        output: raw.output,
        seed: raw.seed,
        threads: raw.threads,
        base_dir: base_dir.to_path_buf(),
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("config: cannot read {}", path.display()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base).map_err(|e| anyhow!("{}: {e}", path.display()))
}

impl RunConfig {
    /// Checks that the fields `mode` needs are present.
    pub fn require(&self, mode: Mode) -> Result<()> {
        if let Some(m) = self.mode {
            if m != mode {
                bail!("config: file is for mode `{m:?}` but `{mode:?}` was requested");
            }
        }
        if mode == Mode::Bench {
            return Ok(());
        }
        if self.problem.is_none() {
            bail!("config: missing field `problem`");
        }
        if self.x0.is_none() {
            bail!("config: missing field `x0`");
        }
        let needs_lattice = match mode {
            Mode::Simulate => matches!(self.policy, PolicySource::Extracted | PolicySource::File(_)),
            _ => true,
        };
        if needs_lattice && self.lattice.is_none() {
            bail!("config: missing field `lattice`");
        }
        if mode == Mode::Simulate && self.lattice.is_none() && self.simulation.n_steps.is_none() {
            bail!("config: missing field `simulation.n_steps`");
        }
        Ok(())
    }

    pub fn problem(&self) -> &Problem {
        self.problem.as_ref().expect("checked by require")
    }
}
