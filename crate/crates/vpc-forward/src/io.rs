//! Little-endian binary snapshots and CSV diagnostics.
//!
//! Every binary file starts with the same header:
//!
//! | bytes | content                          |
//! |-------|----------------------------------|
//! | 4     | magic `VPMG`                     |
//! | 4     | format version (u32)             |
//! | 4     | section tag (`TRAJ`, `COST`, …)  |
//! | 32    | SHA-256 of the scenario          |
//! | 4     | worker thread count (u32)        |
//!
//! A `TRAJ` section follows with N_p (u64), N_t (u64), dt (f64), a flag word
//! (u32, bit 0 set when M and N are present) and then, for each of the
//! N_t + 1 steps, z as N_p×6 f64 followed by M and N as N_p×36 f64 each.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use vpc_model::{Mat6, Vec6};

use crate::{det_deviation, inverse_deviation, lp_norm, support_radius, ParticleEnsemble, TrajectoryStore};

pub const MAGIC: &[u8; 4] = b"VPMG";
pub const VERSION: u32 = 1;

/// Provenance stamped into every artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub scenario_hash: [u8; 32],
    pub threads: u32,
}

impl Provenance {
    pub fn hash_hex(&self) -> String {
        self.scenario_hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn write_header<W: Write>(w: &mut W, tag: &[u8; 4], prov: &Provenance) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_all(tag)?;
    w.write_all(&prov.scenario_hash)?;
    w.write_u32::<LittleEndian>(prov.threads)
}

pub fn read_header<R: Read>(r: &mut R, tag: &[u8; 4]) -> io::Result<Provenance> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    if &buf != MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad magic"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("unsupported version {version}")));
    }
    r.read_exact(&mut buf)?;
    if &buf != tag {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "unexpected section tag"));
    }
    let mut scenario_hash = [0u8; 32];
    r.read_exact(&mut scenario_hash)?;
    let threads = r.read_u32::<LittleEndian>()?;
    Ok(Provenance { scenario_hash, threads })
}

pub fn write_f64s<W: Write>(w: &mut W, xs: impl IntoIterator<Item = f64>) -> io::Result<()> {
    for x in xs {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

pub fn read_f64s<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out)?;
    Ok(out)
}

pub fn write_trajectory<W: Write>(w: &mut W, traj: &TrajectoryStore, prov: &Provenance, with_matrices: bool) -> io::Result<()> {
    let with_matrices = with_matrices && traj.has_matrices();
    write_header(w, b"TRAJ", prov)?;
    w.write_u64::<LittleEndian>(traj.n_particles() as u64)?;
    w.write_u64::<LittleEndian>(traj.n_steps() as u64)?;
    w.write_f64::<LittleEndian>(traj.dt)?;
    w.write_u32::<LittleEndian>(with_matrices as u32)?;
    for n in 0..=traj.n_steps() {
        write_f64s(w, traj.z[n].iter().flat_map(|z| z.iter().copied()))?;
        if with_matrices {
            write_f64s(w, traj.m[n].iter().flat_map(|m| m.iter().copied()))?;
            write_f64s(w, traj.ninv[n].iter().flat_map(|m| m.iter().copied()))?;
        }
    }
    Ok(())
}

/// Positions and optional (M, N) slices read back from a `TRAJ` file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySnapshot {
    pub provenance: Provenance,
    pub dt: f64,
    pub z: Vec<Vec<Vec6>>,
    pub matrices: Option<(Vec<Vec<Mat6>>, Vec<Vec<Mat6>>)>,
}

pub fn read_trajectory<R: Read>(r: &mut R) -> io::Result<TrajectorySnapshot> {
    let provenance = read_header(r, b"TRAJ")?;
    let np = r.read_u64::<LittleEndian>()? as usize;
    let nt = r.read_u64::<LittleEndian>()? as usize;
    let dt = r.read_f64::<LittleEndian>()?;
    let with_matrices = r.read_u32::<LittleEndian>()? & 1 == 1;
    let mut z = Vec::with_capacity(nt + 1);
    let (mut ms, mut ns) = (Vec::new(), Vec::new());
    for _ in 0..=nt {
        let raw = read_f64s(r, np * 6)?;
        z.push(raw.chunks(6).map(Vec6::from_column_slice).collect());
        if with_matrices {
            let m = read_f64s(r, np * 36)?;
            ms.push(m.chunks(36).map(Mat6::from_column_slice).collect());
            let k = read_f64s(r, np * 36)?;
            ns.push(k.chunks(36).map(Mat6::from_column_slice).collect());
        }
    }
    Ok(TrajectorySnapshot {
        provenance,
        dt,
        z,
        matrices: with_matrices.then_some((ms, ns)),
    })
}

/// Time series of support radius, L^p norms and Jacobian drift.
pub fn write_diagnostics_csv<W: Write>(w: &mut W, ens: &ParticleEnsemble, traj: &TrajectoryStore, prov: &Provenance) -> io::Result<()> {
    writeln!(w, "# scenario_hash={}", prov.hash_hex())?;
    writeln!(w, "# threads={}", prov.threads)?;
    writeln!(w, "t,support_radius,l1,l2,linf,det_m_dev,mn_dev,e_sup")?;
    let l1 = lp_norm(ens, 1.0).unwrap_or(f64::NAN);
    let l2 = lp_norm(ens, 2.0).unwrap_or(f64::NAN);
    let li = lp_norm(ens, f64::INFINITY).unwrap_or(f64::NAN);
    for n in 0..=traj.n_steps() {
        let (dm, mn) = if traj.has_matrices() {
            (det_deviation(traj, n), inverse_deviation(traj, n))
        } else {
            (f64::NAN, f64::NAN)
        };
        writeln!(
            w,
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.6e},{:.6e},{:.6e}",
            traj.times[n],
            support_radius(traj, n),
            l1,
            l2,
            li,
            dm,
            mn,
            traj.e_sup[n]
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{run_forward, sample_ensemble, ControlField};
    use vpc_model::{AdmissibleSpec, BumpSum, CompactBump, CutoffSpec, FieldGridSpec, RunConfig};

    #[test]
    fn trajectory_roundtrip() {
        let cfg = RunConfig {
            t_final: 0.2,
            dt: 0.1,
            softening: 0.2,
            sample_spacing: 0.5,
            weight_floor: 0.0,
            field_grid: FieldGridSpec {
                origin: [-4.0; 3],
                spacing: [1.0; 3],
                dims: [9; 3],
                n_time_knots: 2,
            },
            lambda: 0.0,
            admissible: AdmissibleSpec { k: 1.0, beta: 4.0 },
            cutoff: CutoffSpec::new(5.0, 10.0).unwrap(),
        };
        let d = BumpSum::single(CompactBump::new([0.0; 6], 0.6, 0.6, 1.0, 3).unwrap());
        let ens = sample_ensemble(&d, 0.3, 0.0).unwrap();
        let tr = run_forward(&ens, &ControlField::zeros(cfg.field_grid, cfg.t_final), &cfg).unwrap();
        let prov = Provenance {
            scenario_hash: [7; 32],
            threads: 3,
        };
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &tr, &prov, true).unwrap();
        let snap = read_trajectory(&mut buf.as_slice()).unwrap();
        assert_eq!(snap.provenance, prov);
        assert_eq!(snap.dt, tr.dt);
        assert_eq!(snap.z, tr.z);
        let (m, n) = snap.matrices.unwrap();
        assert_eq!(m, tr.m);
        assert_eq!(n, tr.ninv);

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_trajectory(&mut bad.as_slice()).is_err());
        assert!(read_header(&mut buf.as_slice(), b"COST").is_err());

        let mut csv = Vec::new();
        write_diagnostics_csv(&mut csv, &ens, &tr, &prov).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], format!("# scenario_hash={}", "07".repeat(32)));
        assert_eq!(lines[1], "# threads=3");
        assert_eq!(lines.len(), 3 + tr.times.len());
    }
}
