use std::hash::{DefaultHasher, Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::controls::TimeGrid;
use crate::par;
use crate::problem::{FuelMode, ProblemSpec};
use crate::{Error, Result};

/// One state axis: `n` evenly spaced points on `[min, max]` plus a ghost
/// point on each side. Ghost points are always exterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn h(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    /// Stored points, ghosts included.
    pub fn stored(&self) -> usize {
        self.n + 2
    }

    /// Coordinate of stored index `i` (index 0 is the lower ghost).
    pub fn coord(&self, i: usize) -> f64 {
        if i == self.n {
            self.max
        } else {
            self.min + (i as f64 - 1.0) * self.h()
        }
    }
}

/// Fuel levels `z_j = j δ`, `j = 0..levels`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuelAxis {
    pub delta: f64,
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeOptions {
    /// `(min, max)` per state coordinate.
    pub bounds: Vec<(f64, f64)>,
    /// Points per coordinate (at least 2), ghosts excluded.
    pub points: Vec<usize>,
    pub n_steps: usize,
    /// Double the number of time steps until the stencil is feasible.
    #[serde(default)]
    pub auto_shrink: bool,
}

/// Largest number of step doublings tried by auto-shrink.
pub const MAX_SHRINKS: usize = 16;

/// Tolerance on stencil probabilities before they count as negative.
const TOL_PROB: f64 = 1e-12;

/// Discretised `(t, x, z)` space. Nodes are indexed
/// `(k * n_fuel + j) * n_states + s`, with state index `s` row-major over
/// the stored axes (last coordinate fastest).
#[derive(Debug, Clone)]
pub struct Lattice {
    pub spec: ProblemSpec,
    pub grid: TimeGrid,
    pub axes: Vec<Axis>,
    pub fuel: Option<FuelAxis>,
    /// Number of time-step doublings applied by auto-shrink.
    pub shrinks: usize,
    strides: Vec<usize>,
    n_states: usize,
    exterior: Vec<bool>,
    coords: Vec<f64>,
}

impl Lattice {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_fuel(&self) -> usize {
        self.fuel.map_or(1, |f| f.levels)
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps
    }

    pub fn slice_len(&self) -> usize {
        self.n_fuel() * self.n_states
    }

    pub fn n_nodes(&self) -> usize {
        (self.grid.n_steps + 1) * self.slice_len()
    }

    pub fn node(&self, k: usize, j: usize, s: usize) -> usize {
        (k * self.n_fuel() + j) * self.n_states + s
    }

    pub fn split(&self, node: usize) -> (usize, usize, usize) {
        let s = node % self.n_states;
        let kj = node / self.n_states;
        (kj / self.n_fuel(), kj % self.n_fuel(), s)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn x(&self, s: usize) -> &[f64] {
        let d = self.dim();
        &self.coords[s * d..(s + 1) * d]
    }

    /// Fuel value of level `j`; always 0 with infinite fuel.
    pub fn z(&self, j: usize) -> f64 {
        self.fuel.map_or(0.0, |f| {
            if j + 1 == f.levels {
                self.spec.zbar().unwrap_or(j as f64 * f.delta)
            } else {
                j as f64 * f.delta
            }
        })
    }

    pub fn multi_index(&self, s: usize) -> Vec<usize> {
        self.strides
            .iter()
            .zip(&self.axes)
            .map(|(st, ax)| (s / st) % ax.stored())
            .collect()
    }

    pub fn is_ghost(&self, s: usize) -> bool {
        self.multi_index(s)
            .iter()
            .zip(&self.axes)
            .any(|(&i, ax)| i == 0 || i == ax.n + 1)
    }

    pub fn is_exterior(&self, j: usize, s: usize) -> bool {
        self.exterior[j * self.n_states + s]
    }

    /// State index one step along coordinate `i`, if it is stored.
    pub fn neighbor(&self, s: usize, i: usize, up: bool) -> Option<usize> {
        let idx = (s / self.strides[i]) % self.axes[i].stored();
        if up {
            (idx + 1 < self.axes[i].stored()).then(|| s + self.strides[i])
        } else {
            (idx > 0).then(|| s - self.strides[i])
        }
    }

    pub(crate) fn offset(&self, s: usize, moves: &[(usize, bool)]) -> usize {
        let mut out = s;
        for &(i, up) in moves {
            if up {
                out += self.strides[i];
            } else {
                out -= self.strides[i];
            }
        }
        out
    }

    /// Target of an exertion `(coordinate, direction)` from `(j, s)`, or
    /// `None` if that direction is not exertable or the fuel is used up.
    pub fn exert_target(&self, j: usize, s: usize, coord: usize, plus: bool) -> Option<(usize, usize)> {
        let e = self.spec.exertable[coord];
        if !(if plus { e.plus } else { e.minus }) {
            return None;
        }
        let j2 = match self.fuel {
            Some(f) if j + 1 >= f.levels => return None,
            Some(_) => j + 1,
            None => j,
        };
        self.neighbor(s, coord, plus).map(|s2| (j2, s2))
    }

    /// Nearest stored state; the flag is set when `x` lies outside the
    /// stored box by more than half a spacing.
    pub fn locate(&self, x: &[f64]) -> (usize, bool) {
        let mut s = 0;
        let mut outside = false;
        for (i, ax) in self.axes.iter().enumerate() {
            let f = (x[i] - ax.min) / ax.h() + 1.0;
            let r = f.round();
            let max = (ax.stored() - 1) as f64;
            if !(r >= 0.0 && r <= max) {
                outside = true;
            }
            s += (r.clamp(0.0, max) as usize) * self.strides[i];
        }
        (s, outside)
    }

    /// Nearest fuel level.
    pub fn locate_fuel(&self, z: f64) -> (usize, bool) {
        match self.fuel {
            None => (0, false),
            Some(f) => {
                let r = (z / f.delta).round();
                let max = (f.levels - 1) as f64;
                (r.clamp(0.0, max) as usize, !(r >= 0.0 && r <= max))
            }
        }
    }

    /// Time slice nearest to `t`.
    pub fn slice_at(&self, t: f64) -> usize {
        let k = ((t - self.grid.t0) / self.grid.dt()).round();
        k.clamp(0.0, self.grid.n_steps as f64) as usize
    }

    /// Identifies the lattice geometry (not the coefficients).
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.spec.name.hash(&mut h);
        for ax in &self.axes {
            ax.min.to_bits().hash(&mut h);
            ax.max.to_bits().hash(&mut h);
            ax.n.hash(&mut h);
        }
        self.grid.t0.to_bits().hash(&mut h);
        self.grid.t_end.to_bits().hash(&mut h);
        self.grid.n_steps.hash(&mut h);
        if let Some(f) = self.fuel {
            f.delta.to_bits().hash(&mut h);
            f.levels.hash(&mut h);
        }
        h.finish()
    }
}

/// Markov-chain transition stencils per `(step, state, action)`, stored
/// compressed. Fuel never changes along a transition.
#[derive(Debug, Clone)]
pub struct TransitionModel {
    n_actions: usize,
    n_states: usize,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    probs: Vec<f64>,
}

impl TransitionModel {
    /// `(targets, probabilities)` from state `s` at step `k < n` under action `a`.
    /// Empty for ghost states.
    pub fn stencil(&self, k: usize, s: usize, a: usize) -> (&[u32], &[f64]) {
        let i = (k * self.n_states + s) * self.n_actions + a;
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.targets[r.clone()], &self.probs[r])
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_entries(&self) -> usize {
        self.probs.len()
    }
}

/// Builds the lattice and the upwind transition stencils.
///
/// With `a = σσᵀ` and `b = μ`, coordinate `i` moves `±h_i` with probability
/// `dt (a_ii / 2h_i² − Σ_{j≠i} |a_ij| / 2h_i h_j + b_i^± / h_i)`, each pair
/// `i < j` moves diagonally with `dt a_ij^± / 2h_i h_j` in the matching
/// corners, and the remainder stays put. The first moment is exact, the
/// second matches `a dt` up to `|b| h dt` on the diagonal. A coordinate with
/// no diffusion only moves in its drift direction.
pub fn build_lattice(spec: &ProblemSpec, opts: &LatticeOptions) -> Result<(Lattice, TransitionModel)> {
    spec.check_structure()?;
    let d = spec.dims.state;
    if opts.bounds.len() != d || opts.points.len() != d {
        return Err(Error::InvalidArgument(format!("lattice needs bounds and points for {d} coordinates")));
    }
    let mut axes = Vec::with_capacity(d);
    for (i, (&(lo, hi), &n)) in opts.bounds.iter().zip(&opts.points).enumerate() {
        if n < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "axis {i}: need min < max and at least 2 points, got [{lo}, {hi}] with {n}"
            )));
        }
        axes.push(Axis { min: lo, max: hi, n });
    }
    let fuel = match spec.fuel_mode {
        FuelMode::Infinite { .. } => None,
        FuelMode::Finite { zbar } => {
            let hs: Vec<f64> = (0..d)
                .filter(|&i| spec.exertable[i].plus || spec.exertable[i].minus)
                .map(|i| axes[i].h())
                .collect();
            let delta = match hs.first() {
                None => zbar.max(1.0),
                Some(&h0) => {
                    if hs.iter().any(|h| (h - h0).abs() > 1e-12 * h0) {
                        return Err(Error::InvalidArgument(
                            "exertable coordinates must share one spacing (it is the fuel step)".into(),
                        ));
                    }
                    h0
                }
            };
            let steps = (zbar / delta).round();
            if (steps * delta - zbar).abs() > 1e-9 * zbar.max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "zbar = {zbar} is not a multiple of the fuel step {delta}"
                )));
            }
            Some(FuelAxis {
                delta,
                levels: steps as usize + 1,
            })
        }
    };
    let mut strides = vec![1usize; d];
    for i in (0..d.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * axes[i + 1].stored();
    }
    let n_states: usize = axes.iter().map(|a| a.stored()).product();
    let mut coords = Vec::with_capacity(n_states * d);
    for s in 0..n_states {
        for (i, ax) in axes.iter().enumerate() {
            coords.push(ax.coord((s / strides[i]) % ax.stored()));
        }
    }
    let n_steps_user = opts.n_steps;
    let mut shrinks = 0;
    loop {
        let grid = TimeGrid::new(spec.start_t, spec.horizon, n_steps_user << shrinks)?;
        let mut lat = Lattice {
            spec: spec.clone(),
            grid,
            axes: axes.clone(),
            fuel,
            shrinks,
            strides: strides.clone(),
            n_states,
            exterior: Vec::new(),
            coords: coords.clone(),
        };
        let n_fuel = lat.n_fuel();
        let exterior = (0..n_fuel * n_states)
            .map(|js| {
                let (j, s) = (js / n_states, js % n_states);
                lat.is_ghost(s) || !spec.in_domain(lat.x(s), lat.z(j))
            })
            .collect();
        lat.exterior = exterior;
        match build_transitions(&lat) {
            Ok(t) => return Ok((lat, t)),
            Err(StencilError::Step(_)) if opts.auto_shrink && shrinks < MAX_SHRINKS => shrinks += 1,
            Err(StencilError::Step(msg)) | Err(StencilError::Shape(msg)) => {
                return Err(Error::InfeasibleStencil(msg));
            }
            Err(StencilError::Other(e)) => return Err(e),
        }
    }
}

enum StencilError {
    /// Fixable by a smaller time step.
    Step(String),
    /// Diffusion not diagonally dominant relative to the spacings.
    Shape(String),
    Other(Error),
}

fn build_transitions(lat: &Lattice) -> std::result::Result<TransitionModel, StencilError> {
    let spec = &lat.spec;
    let d = lat.dim();
    let dp = spec.dims.noise;
    let n_actions = spec.action_set.len();
    let n = lat.grid.n_steps;
    let ns = lat.n_states();
    let dt = lat.grid.dt();
    let hs: Vec<f64> = lat.axes.iter().map(|a| a.h()).collect();

    type Row = Vec<(u32, f64)>;
    let rows: Vec<std::result::Result<Vec<Row>, StencilError>> = par::map_range(n * ns, |ks| {
        let (k, s) = (ks / ns, ks % ns);
        let mut out = Vec::with_capacity(n_actions);
        if lat.is_ghost(s) {
            out.resize(n_actions, Vec::new());
            return Ok(out);
        }
        let t = lat.grid.time(k);
        let x = lat.x(s);
        let mut mu = vec![0.0; d];
        let mut sig = vec![0.0; d * dp];
        for a in 0..n_actions {
            spec.drift_at(t, x, a, &mut mu);
            spec.diffusion_at(t, x, a, &mut sig);
            if mu.iter().chain(&sig).any(|v| !v.is_finite()) {
                return Err(StencilError::Other(Error::NonFinite {
                    what: "coefficient",
                    path: s,
                    step: k,
                }));
            }
            let cov = |i: usize, j: usize| (0..dp).map(|m| sig[i * dp + m] * sig[j * dp + m]).sum::<f64>();
            let mut row: Row = Vec::with_capacity(1 + 2 * d + 2 * d * d);
            let mut total = 0.0;
            let mut push = |row: &mut Row, target: usize, p: f64| {
                if p > 0.0 {
                    row.push((target as u32, p));
                    total += p;
                }
            };
            row.push((s as u32, 0.0));
            for i in 0..d {
                let aii = cov(i, i);
                let mut diag = aii / (2.0 * hs[i] * hs[i]);
                for j in 0..d {
                    if j != i {
                        diag -= cov(i, j).abs() / (2.0 * hs[i] * hs[j]);
                    }
                }
                if diag < -TOL_PROB * (aii / (hs[i] * hs[i])).max(1.0) {
                    return Err(StencilError::Shape(format!(
                        "diffusion at t={t}, x={x:?}, action {a} is not diagonally dominant for the chosen spacings"
                    )));
                }
                let diag = diag.max(0.0);
                let up = dt * (diag + mu[i].max(0.0) / hs[i]);
                let down = dt * (diag + (-mu[i]).max(0.0) / hs[i]);
                push(&mut row, lat.offset(s, &[(i, true)]), up);
                push(&mut row, lat.offset(s, &[(i, false)]), down);
            }
            for i in 0..d {
                for j in i + 1..d {
                    let aij = cov(i, j);
                    let q = dt * aij.abs() / (2.0 * hs[i] * hs[j]);
                    let same = aij > 0.0;
                    push(&mut row, lat.offset(s, &[(i, true), (j, same)]), q);
                    push(&mut row, lat.offset(s, &[(i, false), (j, !same)]), q);
                }
            }
            let stay = 1.0 - total;
            if stay < -TOL_PROB {
                return Err(StencilError::Step(format!(
                    "time step {dt} too large at t={t}, x={x:?}, action {a} (stay probability {stay})"
                )));
            }
            if stay > 0.0 {
                row[0].1 = stay;
            } else {
                row.remove(0);
            }
            out.push(row);
        }
        Ok(out)
    });
    let mut offsets = Vec::with_capacity(n * ns * n_actions + 1);
    let mut targets = Vec::new();
    let mut probs = Vec::new();
    offsets.push(0);
    for r in rows {
        for row in r? {
            for (t, p) in row {
                targets.push(t);
                probs.push(p);
            }
            offsets.push(targets.len());
        }
    }
    Ok(TransitionModel {
        n_actions,
        n_states: ns,
        offsets,
        targets,
        probs,
    })
}
