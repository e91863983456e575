//! Pasting of policies at an intermediate time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controls::{exceeds_budget, Decision, NoiseFunctionalPolicy, NoiseView, StateView};
use crate::solver::{
    evaluate_policy, rollout, ChainPolicy, Lattice, LatticePolicy, NodeDecision, PolicyField, TransitionModel,
    ValueField,
};
use crate::stats::Estimate;
use crate::{Error, Result};

/// A box of `(x, z)` space: `x ∈ [x_lo, x_hi)` coordinatewise and
/// `z ∈ (z_lo, z_hi]`, with representative `(rep_x, rep_z)` and
/// `rep_z = z_hi` so the representative holds the least fuel left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub z_lo: f64,
    pub z_hi: f64,
    pub rep_x: Vec<f64>,
    pub rep_z: f64,
}

impl Bin {
    pub fn contains(&self, x: &[f64], z: f64) -> bool {
        z > self.z_lo && z <= self.z_hi && x.iter().zip(&self.x_lo).zip(&self.x_hi).all(|((v, lo), hi)| v >= lo && v < hi)
    }

    fn overlaps(&self, other: &Bin) -> bool {
        self.z_lo < other.z_hi
            && other.z_lo < self.z_hi
            && (0..self.x_lo.len()).all(|i| self.x_lo[i] < other.x_hi[i] && other.x_lo[i] < self.x_hi[i])
    }

    pub fn diameter(&self) -> f64 {
        let dz = self.z_hi - self.z_lo;
        (self.x_lo.iter().zip(&self.x_hi).map(|(lo, hi)| (hi - lo) * (hi - lo)).sum::<f64>() + dz * dz).sqrt()
    }
}

/// Disjoint bins with representatives.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PartitionScheme {
    bins: Vec<Bin>,
}

impl PartitionScheme {
    pub fn new(bins: Vec<Bin>) -> Result<Self> {
        for (i, b) in bins.iter().enumerate() {
            if b.x_lo.len() != b.x_hi.len() || b.rep_x.len() != b.x_lo.len() {
                return Err(Error::InvalidArgument(format!("bin {i}: inconsistent dimensions")));
            }
            if !b.contains(&b.rep_x, b.rep_z) {
                return Err(Error::InvalidArgument(format!("bin {i}: representative outside the bin")));
            }
            if b.rep_z != b.z_hi {
                return Err(Error::InvalidArgument(format!(
                    "bin {i}: representative fuel must be the bin's largest fuel value"
                )));
            }
            for (j, c) in bins[..i].iter().enumerate() {
                if b.overlaps(c) {
                    return Err(Error::InvalidArgument(format!("bins {j} and {i} overlap")));
                }
            }
        }
        Ok(PartitionScheme { bins })
    }

    /// No bins: every path stops at the pasting time.
    pub fn empty() -> Self {
        PartitionScheme::default()
    }

    pub fn bins(&self) -> &[Bin] {
        &self.bins
    }

    pub fn locate(&self, x: &[f64], z: f64) -> Option<usize> {
        self.bins.iter().position(|b| b.contains(x, z))
    }

    pub fn diameter(&self) -> f64 {
        self.bins.iter().map(Bin::diameter).fold(0.0, f64::max)
    }

    /// Bins made of `x_block` consecutive lattice points per axis and
    /// `z_block` consecutive fuel levels, covering every non-ghost point.
    /// Representatives sit on the middle point and the top fuel level.
    pub fn lattice_blocks(lat: &Lattice, x_block: usize, z_block: usize) -> Result<Self> {
        if x_block == 0 || z_block == 0 {
            return Err(Error::InvalidArgument("block sizes must be positive".into()));
        }
        let d = lat.dim();
        let groups: Vec<Vec<(usize, usize)>> = lat
            .axes
            .iter()
            .map(|ax| {
                (1..=ax.n)
                    .step_by(x_block)
                    .map(|a| (a, (a + x_block - 1).min(ax.n)))
                    .collect()
            })
            .collect();
        let (z_groups, half): (Vec<(usize, usize)>, f64) = match lat.fuel {
            Some(f) => (
                (0..f.levels)
                    .step_by(z_block)
                    .map(|a| (a, (a + z_block - 1).min(f.levels - 1)))
                    .collect(),
                f.delta / 2.0,
            ),
            None => (vec![(0, 0)], 0.5),
        };
        let mut bins = Vec::new();
        let mut idx = vec![0usize; d];
        loop {
            let mut x_lo = Vec::with_capacity(d);
            let mut x_hi = Vec::with_capacity(d);
            let mut rep_x = Vec::with_capacity(d);
            for i in 0..d {
                let ax = &lat.axes[i];
                let (a, b) = groups[i][idx[i]];
                let h = ax.h();
                x_lo.push(ax.coord(a) - h / 2.0);
                x_hi.push(ax.coord(b) + h / 2.0);
                rep_x.push(ax.coord((a + b) / 2));
            }
            for &(za, zb) in &z_groups {
                bins.push(Bin {
                    x_lo: x_lo.clone(),
                    x_hi: x_hi.clone(),
                    z_lo: lat.z(za) - half,
                    z_hi: lat.z(zb),
                    rep_x: rep_x.clone(),
                    rep_z: lat.z(zb),
                });
            }
            let mut i = 0;
            loop {
                if i == d {
                    return PartitionScheme::new(bins);
                }
                idx[i] += 1;
                if idx[i] < groups[i].len() {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
        }
    }
}

/// The pasted policy: `base` before step `u`; from `u` on, the policy of
/// the bin holding `(X_u, Z_u)`, run on the noise and state observed since
/// `u` and on the fuel shifted to the bin's representative level. Paths
/// outside every bin stop at `u`.
pub struct PastedPolicy<B, P> {
    pub base: B,
    pub u: usize,
    pub scheme: PartitionScheme,
    pub bins: Vec<P>,
    pub zbar: Option<f64>,
}

/// Builds a [`PastedPolicy`], checking there is one policy per bin.
pub fn concatenate_policies<B, P>(
    base: B,
    u: usize,
    scheme: PartitionScheme,
    bins: Vec<P>,
    zbar: Option<f64>,
) -> Result<PastedPolicy<B, P>>
where
    B: NoiseFunctionalPolicy,
    P: NoiseFunctionalPolicy,
{
    if bins.len() != scheme.bins().len() {
        return Err(Error::InvalidArgument(format!(
            "{} bin policies for {} bins",
            bins.len(),
            scheme.bins().len()
        )));
    }
    Ok(PastedPolicy {
        base,
        u,
        scheme,
        bins,
        zbar,
    })
}

impl<B: NoiseFunctionalPolicy, P: NoiseFunctionalPolicy> NoiseFunctionalPolicy for PastedPolicy<B, P> {
    /// The bin policy's increments pass through a per-step gate against the
    /// fuel left from its representative level, `zbar - z_n - (Z_k - Z_u)`.
    fn decide(&self, k: usize, noise: NoiseView<'_>, state: Option<StateView<'_>>) -> Decision {
        if k < self.u {
            return self.base.decide(k, noise, state);
        }
        let Some(st) = state else {
            return Decision::stop();
        };
        let (xu, zu) = (st.x_at(self.u), st.z_at(self.u));
        let Some(n) = self.scheme.locate(xu, zu) else {
            return Decision::stop();
        };
        let rep_z = self.scheme.bins()[n].rep_z;
        let d = st.dim();
        let mut xs = Vec::with_capacity((k - self.u + 1) * d);
        let mut zs = Vec::with_capacity(k - self.u + 1);
        for i in self.u..=k {
            xs.extend_from_slice(st.x_at(i));
            zs.push(rep_z + (st.z_at(i) - zu));
        }
        let view = StateView::new(st.t, &xs, &zs, d);
        let dec = self.bins[n].decide(k - self.u, noise.suffix(self.u), Some(view));
        if dec.stop {
            return dec;
        }
        if let Some(zbar) = self.zbar {
            let var: f64 = dec.inc_plus.iter().chain(&dec.inc_minus).sum();
            if exceeds_budget(var, zbar - zs[zs.len() - 1]) {
                return Decision::run(dec.action);
            }
        }
        dec
    }
}

/// A lattice policy read at a fuel level `offset` above the real one.
/// Levels past the top stop; exit decisions (the shifted node being
/// exterior) become Stop.
pub struct ShiftedPolicy<'a> {
    pub inner: &'a dyn LatticePolicy,
    pub offset: usize,
    pub levels: usize,
}

impl LatticePolicy for ShiftedPolicy<'_> {
    fn decide(&self, k: usize, j: usize, s: usize) -> NodeDecision {
        let j2 = j + self.offset;
        if j2 >= self.levels {
            return NodeDecision::Stop;
        }
        match self.inner.decide(k, j2, s) {
            NodeDecision::Exit => NodeDecision::Stop,
            d => d,
        }
    }
}

/// Lattice counterpart of [`PastedPolicy`] for chain rollouts started at step 0.
pub struct PastedLattice<'a> {
    pub lattice: &'a Lattice,
    pub base: &'a dyn LatticePolicy,
    pub u: usize,
    pub scheme: &'a PartitionScheme,
    pub bins: Vec<&'a dyn LatticePolicy>,
}

impl PastedLattice<'_> {
    fn shifted(&self, ju: usize, su: usize) -> Option<ShiftedPolicy<'_>> {
        let lat = self.lattice;
        let n = self.scheme.locate(lat.x(su), lat.z(ju))?;
        let (jn, _) = lat.locate_fuel(self.scheme.bins()[n].rep_z);
        Some(ShiftedPolicy {
            inner: self.bins[n],
            offset: jn.saturating_sub(ju),
            levels: lat.n_fuel(),
        })
    }
}

impl ChainPolicy for PastedLattice<'_> {
    fn decide(&self, k: usize, j: usize, s: usize, entries: &[(usize, usize)]) -> NodeDecision {
        if k < self.u {
            return self.base.decide(k, j, s);
        }
        let (ju, su) = entries[self.u];
        match self.shifted(ju, su) {
            Some(p) => p.decide(k, j, s),
            None => NodeDecision::Stop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcatReport {
    pub m: f64,
    pub bins: usize,
    /// Largest `|v(member) - v(rep)|` or `|J(member) - J(rep)|` over bins.
    pub epsilon: f64,
    /// Payoff of the pasted policy.
    pub pasted: Estimate,
    /// `E[N_u + v(u, node_u) 1{alive at u}]` under the base policy.
    pub rhs: Estimate,
    /// Paired difference `payoff - M_u`.
    pub difference: Estimate,
    /// `1/m + 2ε + 3 SE`.
    pub allowance: f64,
    /// Every path used at most the fuel left at `u` after `u`.
    pub admissible: bool,
    /// Share of paths alive at `u` that fell in no bin.
    pub uncovered: f64,
    pub passed: bool,
}

/// Perturbs `optimal` at random nodes from step `u` on, keeping each change
/// that leaves the value at the bin representatives within `1/m` of `v`.
#[allow(clippy::too_many_arguments)]
pub fn near_optimal_bin_policies(
    lat: &Lattice,
    tr: &TransitionModel,
    field: &ValueField,
    optimal: &PolicyField,
    u: usize,
    scheme: &PartitionScheme,
    m: f64,
    tries: usize,
    seed: u64,
) -> Result<Vec<PolicyField>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(scheme.bins().len());
    for bin in scheme.bins() {
        let (s_rep, _) = lat.locate(&bin.rep_x);
        let (j_rep, _) = lat.locate_fuel(bin.rep_z);
        let rep = lat.node(u, j_rep, s_rep);
        let target = field.values[rep] - 1.0 / m;
        let mut pol = optimal.clone();
        if u >= lat.n_steps() {
            out.push(pol);
            continue;
        }
        for _ in 0..tries {
            let k = rng.random_range(u..lat.n_steps());
            let j = rng.random_range(0..lat.n_fuel());
            let s = rng.random_range(0..lat.n_states());
            if lat.is_exterior(j, s) {
                continue;
            }
            let mut opts = vec![NodeDecision::Stop];
            opts.extend((0..tr.n_actions()).map(|action| NodeDecision::Continue { action }));
            for coord in 0..lat.dim() {
                for plus in [true, false] {
                    if lat.exert_target(j, s, coord, plus).is_some() {
                        opts.push(NodeDecision::Exert { coord, plus });
                    }
                }
            }
            let node = lat.node(k, j, s);
            let old = pol.decisions[node];
            pol.decisions[node] = opts[rng.random_range(0..opts.len())];
            match evaluate_policy(lat, tr, &(lat, &pol)) {
                Ok(vals) if vals[rep] >= target => {}
                Ok(_) | Err(Error::ExertionCycle { .. }) => pol.decisions[node] = old,
                Err(e) => return Err(e),
            }
        }
        out.push(pol);
    }
    Ok(out)
}

/// Monte Carlo check that pasting `1/m`-optimal bin policies onto `base`
/// at step `u` loses at most `1/m + 2ε` (plus three standard errors)
/// against `E[N_u + v(u, node_u) 1{alive at u}]`, on chain paths from
/// `(0, j0, s0)`. `ε` is computed exactly from the bins' members.
#[allow(clippy::too_many_arguments)]
pub fn check_concatenation(
    lat: &Lattice,
    tr: &TransitionModel,
    field: &ValueField,
    base: &dyn LatticePolicy,
    bin_policies: &[PolicyField],
    u: usize,
    scheme: &PartitionScheme,
    m: f64,
    j0: usize,
    s0: usize,
    n_paths: usize,
    seed: u64,
) -> Result<ConcatReport> {
    if bin_policies.len() != scheme.bins().len() {
        return Err(Error::InvalidArgument("one policy per bin required".into()));
    }
    if u > lat.n_steps() {
        return Err(Error::IndexOutOfRange {
            index: u,
            limit: lat.n_steps(),
        });
    }
    let levels = lat.n_fuel();
    let bins: Vec<(&Lattice, &PolicyField)> = bin_policies.iter().map(|p| (lat, p)).collect();
    let pasted = PastedLattice {
        lattice: lat,
        base,
        u,
        scheme,
        bins: bins.iter().map(|b| b as &dyn LatticePolicy).collect(),
    };
    // ε over members at step u, one exact evaluation per (bin, fuel shift).
    let mut evals: std::collections::HashMap<(usize, usize), Vec<f64>> = Default::default();
    let mut epsilon: f64 = 0.0;
    for (n, bin) in scheme.bins().iter().enumerate() {
        let (s_rep, _) = lat.locate(&bin.rep_x);
        let (j_rep, _) = lat.locate_fuel(bin.rep_z);
        for j in 0..levels {
            for s in 0..lat.n_states() {
                if lat.is_exterior(j, s) || !bin.contains(lat.x(s), lat.z(j)) {
                    continue;
                }
                let offset = j_rep - j;
                if !evals.contains_key(&(n, offset)) {
                    let p = ShiftedPolicy {
                        inner: pasted.bins[n],
                        offset,
                        levels,
                    };
                    evals.insert((n, offset), evaluate_policy(lat, tr, &p)?);
                }
                if !evals.contains_key(&(n, 0)) {
                    evals.insert((n, 0), evaluate_policy(lat, tr, pasted.bins[n])?);
                }
                let j_member = evals[&(n, offset)][lat.node(u, j, s)];
                let j_rep_val = evals[&(n, 0)][lat.node(u, j_rep, s_rep)];
                let dv = (field.at(lat, u, j, s) - field.at(lat, u, j_rep, s_rep)).abs();
                epsilon = epsilon.max(dv).max((j_member - j_rep_val).abs());
            }
        }
    }
    let paths = rollout(lat, tr, &pasted, 0, j0, s0, n_paths, seed)?;
    let mut pay = Vec::with_capacity(paths.len());
    let mut rhs = Vec::with_capacity(paths.len());
    let mut diff = Vec::with_capacity(paths.len());
    let mut admissible = true;
    let mut alive = 0usize;
    let mut uncovered = 0usize;
    for p in &paths {
        let m_u = p.m_at(u, lat, field);
        pay.push(p.payoff());
        rhs.push(m_u);
        diff.push(p.payoff() - m_u);
        if p.end >= u {
            let (ju, su) = p.entries[u];
            if !lat.is_exterior(ju, su) && u < lat.n_steps() {
                alive += 1;
                if scheme.locate(lat.x(su), lat.z(ju)).is_none() {
                    uncovered += 1;
                }
            }
            if let Some(f) = lat.fuel {
                let used = p.exertions_from(u) as f64 * f.delta;
                let left = lat.spec.zbar().unwrap_or(f64::INFINITY) - lat.z(ju);
                admissible &= !exceeds_budget(used, left);
            }
        }
    }
    let difference = Estimate::from_samples(&diff);
    let allowance = 1.0 / m + 2.0 * epsilon + 3.0 * difference.std_error;
    Ok(ConcatReport {
        m,
        bins: scheme.bins().len(),
        epsilon,
        pasted: Estimate::from_samples(&pay),
        rhs: Estimate::from_samples(&rhs),
        allowance,
        passed: difference.mean >= -allowance - 1e-12 && admissible,
        difference,
        admissible,
        uncovered: if alive == 0 { 0.0 } else { uncovered as f64 / alive as f64 },
    })
}
