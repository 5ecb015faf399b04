//! `CTRL` section: origin (3 f64), spacing (3 f64), dims (3 u64), number of
//! knots (u64), T (f64), then three f64 per node in the flat knot-major
//! order of [`ControlField::values`].

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use vpc_forward::io::{read_f64s, read_header, write_f64s, write_header, Provenance};
use vpc_forward::ControlField;
use vpc_model::{FieldGridSpec, Vec3};

use crate::IterRecord;

pub fn write_control<W: Write>(w: &mut W, b: &ControlField, prov: &Provenance) -> io::Result<()> {
    write_header(w, b"CTRL", prov)?;
    let g = b.grid();
    write_f64s(w, g.origin.iter().chain(&g.spacing).copied())?;
    for d in g.dims {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    w.write_u64::<LittleEndian>(g.n_time_knots as u64)?;
    w.write_f64::<LittleEndian>(b.t_final())?;
    write_f64s(w, b.values().iter().flat_map(|v| v.iter().copied()))
}

pub fn read_control<R: Read>(r: &mut R) -> io::Result<(Provenance, ControlField)> {
    let prov = read_header(r, b"CTRL")?;
    let os = read_f64s(r, 6)?;
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = r.read_u64::<LittleEndian>()? as usize;
    }
    let grid = FieldGridSpec {
        origin: [os[0], os[1], os[2]],
        spacing: [os[3], os[4], os[5]],
        dims,
        n_time_knots: r.read_u64::<LittleEndian>()? as usize,
    };
    grid.validate().map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    let t_final = r.read_f64::<LittleEndian>()?;
    let raw = read_f64s(r, 3 * grid.node_count() * grid.n_time_knots)?;
    let values = raw.chunks(3).map(Vec3::from_column_slice).collect();
    let b = ControlField::from_values(grid, t_final, values).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    Ok((prov, b))
}

/// Iterate history as CSV with provenance comment lines.
pub fn write_history_csv<W: Write>(w: &mut W, history: &[IterRecord], prov: &Provenance) -> io::Result<()> {
    writeln!(w, "# scenario_hash={}", prov.hash_hex())?;
    writeln!(w, "# threads={}", prov.threads)?;
    writeln!(w, "iter,J,tracking,reg,grad_norm,step,residual")?;
    for r in history {
        writeln!(
            w,
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.iter, r.j, r.tracking, r.reg, r.grad_norm, r.step, r.residual
        )?;
    }
    Ok(())
}
