//! Value and policy field export.
//!
//! Binary snapshot layout (little-endian):
//!
//! | field | type |
//! |---|---|
//! | magic `"FGVF"` | 4 bytes |
//! | version | u32 |
//! | d | u32 |
//! | has_fuel, has_policy | u8 × 2 |
//! | n_steps, n_fuel, n_states | u64 × 3 |
//! | t0, t_end | f64 × 2 |
//! | per axis: min, max (f64), n (u64) | |
//! | fuel delta | f64 (0 without fuel axis) |
//! | fingerprint | u64 |
//! | values | f64 × nodes |
//! | decisions (if present) | (u8 kind, u32 param) × nodes |
//!
//! Decision kinds: 0 exit, 1 stop, 2 continue (param = action),
//! 3 exert up, 4 exert down (param = coordinate).

use std::io::{Read, Write};

use super::backward::{NodeDecision, PolicyField, ValueField};
use super::lattice::{Axis, FuelAxis, Lattice};
use crate::controls::fmt_f64;
use crate::{Error, Result};

pub const FIELD_MAGIC: &[u8; 4] = b"FGVF";
pub const FIELD_VERSION: u32 = 1;

/// Contents of a binary snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub axes: Vec<Axis>,
    pub fuel: Option<FuelAxis>,
    pub t0: f64,
    pub t_end: f64,
    pub n_steps: usize,
    pub n_fuel: usize,
    pub n_states: usize,
    pub fingerprint: u64,
    pub values: Vec<f64>,
    pub decisions: Option<Vec<NodeDecision>>,
}

/// One row per node: step, time, fuel level, z, state, coordinates,
/// exterior flag, value and (if given) decision label.
pub fn write_field_csv<W: Write>(lat: &Lattice, field: &ValueField, policy: Option<&PolicyField>, w: W) -> Result<()> {
    let d = lat.dim();
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["step".to_string(), "time".into(), "fuel_index".into(), "z".into(), "state".into()];
    header.extend((0..d).map(|i| format!("x{i}")));
    header.extend(["exterior".into(), "value".into()]);
    if policy.is_some() {
        header.push("decision".into());
    }
    wr.write_record(&header)?;
    for node in 0..lat.n_nodes() {
        let (k, j, s) = lat.split(node);
        let mut row = vec![
            k.to_string(),
            fmt_f64(lat.grid.time(k)),
            j.to_string(),
            fmt_f64(lat.z(j)),
            s.to_string(),
        ];
        row.extend(lat.x(s).iter().map(|v| fmt_f64(*v)));
        row.push((lat.is_exterior(j, s) as u8).to_string());
        row.push(fmt_f64(field.values[node]));
        if let Some(p) = policy {
            row.push(p.decisions[node].label());
        }
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_field_binary<W: Write>(lat: &Lattice, field: &ValueField, policy: Option<&PolicyField>, mut w: W) -> Result<()> {
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&FIELD_VERSION.to_le_bytes())?;
    w.write_all(&(lat.dim() as u32).to_le_bytes())?;
    w.write_all(&[lat.fuel.is_some() as u8, policy.is_some() as u8])?;
    for v in [lat.n_steps(), lat.n_fuel(), lat.n_states()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&lat.grid.t0.to_le_bytes())?;
    w.write_all(&lat.grid.t_end.to_le_bytes())?;
    for ax in &lat.axes {
        w.write_all(&ax.min.to_le_bytes())?;
        w.write_all(&ax.max.to_le_bytes())?;
        w.write_all(&(ax.n as u64).to_le_bytes())?;
    }
    w.write_all(&lat.fuel.map_or(0.0, |f| f.delta).to_le_bytes())?;
    w.write_all(&field.fingerprint.to_le_bytes())?;
    for v in &field.values {
        w.write_all(&v.to_le_bytes())?;
    }
    if let Some(p) = policy {
        for d in &p.decisions {
            let (kind, param) = match *d {
                NodeDecision::Exit => (0u8, 0u32),
                NodeDecision::Stop => (1, 0),
                NodeDecision::Continue { action } => (2, action as u32),
                NodeDecision::Exert { coord, plus: true } => (3, coord as u32),
                NodeDecision::Exert { coord, plus: false } => (4, coord as u32),
            };
            w.write_all(&[kind])?;
            w.write_all(&param.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn f64_of(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(take(r)?))
}

fn u64_of(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(take(r)?))
}

pub fn read_field_binary<R: Read>(mut r: R) -> Result<FieldSnapshot> {
    if &take::<4>(&mut r)? != FIELD_MAGIC {
        return Err(Error::InvalidArgument("not a value field snapshot (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != FIELD_VERSION {
        return Err(Error::InvalidArgument(format!("unsupported snapshot version {version}")));
    }
    let d = u32::from_le_bytes(take(&mut r)?) as usize;
    let [has_fuel, has_policy] = take::<2>(&mut r)?;
    let n_steps = u64_of(&mut r)? as usize;
    let n_fuel = u64_of(&mut r)? as usize;
    let n_states = u64_of(&mut r)? as usize;
    let t0 = f64_of(&mut r)?;
    let t_end = f64_of(&mut r)?;
    let mut axes = Vec::with_capacity(d);
    for _ in 0..d {
        let min = f64_of(&mut r)?;
        let max = f64_of(&mut r)?;
        let n = u64_of(&mut r)? as usize;
        axes.push(Axis { min, max, n });
    }
    let delta = f64_of(&mut r)?;
    let fingerprint = u64_of(&mut r)?;
    let nodes = (n_steps + 1) * n_fuel * n_states;
    let values = (0..nodes).map(|_| f64_of(&mut r)).collect::<Result<Vec<_>>>()?;
    let decisions = if has_policy == 1 {
        let mut out = Vec::with_capacity(nodes);
        for _ in 0..nodes {
            let [kind] = take::<1>(&mut r)?;
            let param = u32::from_le_bytes(take(&mut r)?) as usize;
            out.push(match kind {
                0 => NodeDecision::Exit,
                1 => NodeDecision::Stop,
                2 => NodeDecision::Continue { action: param },
                3 => NodeDecision::Exert { coord: param, plus: true },
                4 => NodeDecision::Exert { coord: param, plus: false },
                _ => return Err(Error::InvalidArgument(format!("bad decision kind {kind}"))),
            });
        }
        Some(out)
    } else {
        None
    };
    Ok(FieldSnapshot {
        axes,
        fuel: (has_fuel == 1).then_some(FuelAxis { delta, levels: n_fuel }),
        t0,
        t_end,
        n_steps,
        n_fuel,
        n_states,
        fingerprint,
        values,
        decisions,
    })
}
