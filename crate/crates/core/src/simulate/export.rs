//! Path bundle export.
//!
//! Binary layout (all little-endian):
//!
//! | field | type |
//! |---|---|
//! | magic `"FGPB"` | 4 bytes |
//! | version | u32 |
//! | d, d', l | u32 × 3 |
//! | n_steps, n_paths | u64 × 2 |
//! | t0, t_end | f64 × 2 |
//! | seed | u64 |
//! | x0 | f64 × d |
//! | z0 | f64 |
//!
//! followed by, per path: `tau_step`, `rho_step` (u64), `flip` (i64, −1 for
//! none), noise (f64 × n·d'), states (f64 × (n+1)·d), fuel (f64 × (n+1)),
//! actions (u64 × n), inc_plus and inc_minus (f64 × n·d each).

use std::io::{Read, Write};

use super::{PathBundle, SamplePath};
use crate::controls::{fmt_f64, BVControlPath, EtaPath, TimeGrid};
use crate::problem::Dims;
use crate::{Error, Result};

pub const BUNDLE_MAGIC: &[u8; 4] = b"FGPB";
pub const BUNDLE_VERSION: u32 = 1;

/// Long-format CSV: one row per path and grid point. The control columns
/// on the final grid point are empty.
pub fn write_bundle_csv<W: Write>(bundle: &PathBundle, w: W) -> Result<()> {
    let d = bundle.dims.state;
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["path".to_string(), "step".into(), "time".into()];
    header.extend((0..d).map(|i| format!("x{i}")));
    header.push("z".into());
    header.push("action".into());
    header.extend((0..d).map(|i| format!("inc_plus_{i}")));
    header.extend((0..d).map(|i| format!("inc_minus_{i}")));
    header.push("eta".into());
    wr.write_record(&header)?;
    let n = bundle.grid.n_steps;
    for (pi, p) in bundle.paths.iter().enumerate() {
        for k in 0..=n {
            let mut row = vec![pi.to_string(), k.to_string(), fmt_f64(bundle.grid.time(k))];
            row.extend(p.x(k).iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(p.z(k)));
            if k < n {
                row.push(p.actions[k].to_string());
                row.extend(p.control.plus(k).iter().map(|v| fmt_f64(*v)));
                row.extend(p.control.minus(k).iter().map(|v| fmt_f64(*v)));
            } else {
                row.extend(std::iter::repeat_n(String::new(), 1 + 2 * d));
            }
            row.push((p.eta.eta_at(k) as u8).to_string());
            wr.write_record(&row)?;
        }
    }
    wr.flush()?;
    Ok(())
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s(w: &mut impl Write, vs: &[f64]) -> std::io::Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_bundle_binary<W: Write>(bundle: &PathBundle, mut w: W) -> Result<()> {
    let n = bundle.grid.n_steps;
    let d = bundle.dims.state;
    w.write_all(BUNDLE_MAGIC)?;
    put_u32(&mut w, BUNDLE_VERSION)?;
    put_u32(&mut w, d as u32)?;
    put_u32(&mut w, bundle.dims.noise as u32)?;
    put_u32(&mut w, bundle.dims.action as u32)?;
    put_u64(&mut w, n as u64)?;
    put_u64(&mut w, bundle.paths.len() as u64)?;
    put_f64s(&mut w, &[bundle.grid.t0, bundle.grid.t_end])?;
    put_u64(&mut w, bundle.seed)?;
    put_f64s(&mut w, &bundle.x0)?;
    put_f64s(&mut w, &[bundle.z0])?;
    for p in &bundle.paths {
        put_u64(&mut w, p.tau_step as u64)?;
        put_u64(&mut w, p.rho_step as u64)?;
        w.write_all(&p.eta.flip_index.map_or(-1i64, |f| f as i64).to_le_bytes())?;
        put_f64s(&mut w, &p.noise)?;
        put_f64s(&mut w, &p.states)?;
        put_f64s(&mut w, &p.fuel)?;
        for a in &p.actions {
            put_u64(&mut w, *a as u64)?;
        }
        for k in 0..n {
            put_f64s(&mut w, p.control.plus(k))?;
        }
        for k in 0..n {
            put_f64s(&mut w, p.control.minus(k))?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    r: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.r.read_exact(&mut b)?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect()
    }
}

pub fn read_bundle_binary<R: Read>(r: R) -> Result<PathBundle> {
    let mut rd = Reader { r };
    if &rd.bytes::<4>()? != BUNDLE_MAGIC {
        return Err(Error::InvalidArgument("not a path bundle (bad magic)".into()));
    }
    let version = rd.u32()?;
    if version != BUNDLE_VERSION {
        return Err(Error::InvalidArgument(format!("unsupported bundle version {version}")));
    }
    let d = rd.u32()? as usize;
    let dp = rd.u32()? as usize;
    let l = rd.u32()? as usize;
    let n = rd.u64()? as usize;
    let n_paths = rd.u64()? as usize;
    let t = rd.f64s(2)?;
    let grid = TimeGrid::new(t[0], t[1], n)?;
    let seed = rd.u64()?;
    let x0 = rd.f64s(d)?;
    let z0 = rd.f64s(1)?[0];
    let mut paths = Vec::with_capacity(n_paths);
    for _ in 0..n_paths {
        let tau_step = rd.u64()? as usize;
        let rho_step = rd.u64()? as usize;
        let flip = rd.i64()?;
        let noise = rd.f64s(n * dp)?;
        let states = rd.f64s((n + 1) * d)?;
        let fuel = rd.f64s(n + 1)?;
        let actions = (0..n).map(|_| rd.u64().map(|a| a as usize)).collect::<Result<Vec<_>>>()?;
        let plus = rd.f64s(n * d)?;
        let minus = rd.f64s(n * d)?;
        paths.push(SamplePath {
            noise,
            states,
            fuel,
            actions,
            control: BVControlPath::from_increments(grid, d, plus, minus)?,
            eta: EtaPath {
                grid,
                flip_index: (flip >= 0).then_some(flip as usize),
            },
            tau_step,
            rho_step,
        });
    }
    Ok(PathBundle {
        grid,
        dims: Dims {
            state: d,
            noise: dp,
            action: l,
        },
        x0,
        z0,
        seed,
        paths,
    })
}
