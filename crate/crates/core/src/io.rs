//! Ensemble files.
//!
//! CSV: header `neuron_id,r_1,..,r_d,t,x`, one row per member and grid point,
//! members in order and times increasing. Floats use the shortest
//! representation that reads back to the same value.
//!
//! Binary (little-endian):
//!
//! ```text
//! magic    [u8; 4] = "NFEN"
//! version  u32     = 1
//! dim      u32
//! members  u64
//! dt       f64
//! n_hist   u64
//! n_main   u64
//! then per member: r (dim × f64), values ((n_hist + n_main + 1) × f64)
//! ```

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::network::{Ensemble, PathSample, TimeGrid};

const MAGIC: &[u8; 4] = b"NFEN";
const VERSION: u32 = 1;

pub fn write_ensemble_csv<W: Write>(mut out: W, ensemble: &Ensemble) -> Result<()> {
    let dim = ensemble.members().first().map_or(0, |m| m.r.len());
    let mut header = String::from("neuron_id");
    for d in 1..=dim {
        header.push_str(&format!(",r_{d}"));
    }
    header.push_str(",t,x\n");
    out.write_all(header.as_bytes())?;
    let grid = ensemble.grid();
    let mut line = String::new();
    for (i, m) in ensemble.members().iter().enumerate() {
        let mut prefix = i.to_string();
        for r in &m.r {
            prefix.push(',');
            prefix.push_str(&r.to_string());
        }
        for (p, x) in m.values.iter().enumerate() {
            line.clear();
            line.push_str(&prefix);
            line.push(',');
            line.push_str(&grid.time(p).to_string());
            line.push(',');
            line.push_str(&x.to_string());
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn parse(field: &str, line: usize) -> Result<f64> {
    field.trim().parse().map_err(|_| Error::Format(format!("line {line}: `{field}` is not a number")))
}

/// Read an ensemble written by [`write_ensemble_csv`]. The grid is recovered
/// from the time column of the first member.
pub fn read_ensemble_csv<R: BufRead>(input: R) -> Result<Ensemble> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty ensemble file".into()))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 3 || cols[0] != "neuron_id" || cols[cols.len() - 2] != "t" || cols[cols.len() - 1] != "x" {
        return Err(Error::Format(format!("unexpected header `{header}`")));
    }
    let dim = cols.len() - 3;
    let mut members: Vec<PathSample> = Vec::new();
    let mut ids: Vec<String> = Vec::new();
    let mut times: Vec<f64> = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(Error::Format(format!("line {}: expected {} fields", k + 2, cols.len())));
        }
        if ids.last().map(String::as_str) != Some(f[0]) {
            ids.push(f[0].to_string());
            let r = f[1..=dim].iter().map(|v| parse(v, k + 2)).collect::<Result<Vec<_>>>()?;
            members.push(PathSample { r, values: Vec::new() });
        }
        if members.len() == 1 {
            times.push(parse(f[dim + 1], k + 2)?);
        }
        members.last_mut().expect("member").values.push(parse(f[dim + 2], k + 2)?);
    }
    if members.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if times.len() < 2 {
        return Err(Error::Format("need at least two time points per member".into()));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(dt > 0.0) || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Format("times must increase".into()));
    }
    let n_hist = (-times[0] / dt).round().max(0.0) as usize;
    let n_main = times.len() - 1 - n_hist;
    let grid = TimeGrid { dt, n_hist, n_main };
    Ensemble::new(grid, members)
}

pub fn write_ensemble_binary<W: Write>(mut out: W, ensemble: &Ensemble) -> Result<()> {
    let grid = ensemble.grid();
    let dim = ensemble.members().first().map_or(0, |m| m.r.len());
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(dim as u32).to_le_bytes())?;
    out.write_all(&(ensemble.len() as u64).to_le_bytes())?;
    out.write_all(&grid.dt.to_le_bytes())?;
    out.write_all(&(grid.n_hist as u64).to_le_bytes())?;
    out.write_all(&(grid.n_main as u64).to_le_bytes())?;
    for m in ensemble.members() {
        for v in m.r.iter().chain(&m.values) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_array<R: Read, const N: usize>(input: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_ensemble_binary<R: Read>(mut input: R) -> Result<Ensemble> {
    if &read_array::<_, 4>(&mut input)? != MAGIC {
        return Err(Error::Format("not a binary ensemble file".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut input)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(read_array(&mut input)?) as usize;
    let count = u64::from_le_bytes(read_array(&mut input)?) as usize;
    let dt = f64::from_le_bytes(read_array(&mut input)?);
    let n_hist = u64::from_le_bytes(read_array(&mut input)?) as usize;
    let n_main = u64::from_le_bytes(read_array(&mut input)?) as usize;
    let grid = TimeGrid { dt, n_hist, n_main };
    let mut read_f64 = || -> Result<f64> { Ok(f64::from_le_bytes(read_array(&mut input)?)) };
    let mut members = Vec::with_capacity(count);
    for _ in 0..count {
        let r = (0..dim).map(|_| read_f64()).collect::<Result<Vec<_>>>()?;
        let values = (0..grid.len()).map(|_| read_f64()).collect::<Result<Vec<_>>>()?;
        members.push(PathSample { r, values });
    }
    Ensemble::new(grid, members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::model::build_model;
    use crate::network::simulate_realization;

    fn sample() -> Ensemble {
        let p = build_model(&Config::default()).unwrap();
        let grid = TimeGrid::for_model(&p, 0.01).unwrap();
        simulate_realization(&p, 5, &grid, 2).unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let e = sample();
        let mut buf = Vec::new();
        write_ensemble_csv(&mut buf, &e).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("neuron_id,r_1,t,x\n0,"));
        let back = read_ensemble_csv(&buf[..]).unwrap();
        assert_eq!(back.members(), e.members());
        assert_eq!(back.grid().n_hist, e.grid().n_hist);
        assert_eq!(back.grid().n_main, e.grid().n_main);
        assert!((back.grid().dt - 0.01).abs() < 1e-12);
    }

    #[test]
    fn binary_round_trip() {
        let e = sample();
        let mut buf = Vec::new();
        write_ensemble_binary(&mut buf, &e).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 4 + 8 * 4 + 5 * 8 * (1 + e.grid().len()));
        assert_eq!(read_ensemble_binary(&buf[..]).unwrap(), e);
        assert!(read_ensemble_binary(&b"XXXX"[..]).is_err());
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(read_ensemble_csv(&b""[..]).is_err());
        assert!(read_ensemble_csv(&b"a,b\n"[..]).is_err());
        assert!(read_ensemble_csv(&b"neuron_id,r_1,t,x\n0,0.5,0,abc\n"[..]).is_err());
    }
}
