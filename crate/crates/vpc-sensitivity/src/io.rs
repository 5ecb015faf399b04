//! `COST` section: N_p (u64), N_t (u64), then for each of the N_t + 1 steps
//! g as N_p f64 followed by ∂_z g as N_p×6 f64. The common header is the
//! one written by [`vpc_forward::io::write_header`].

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use vpc_forward::io::{read_f64s, read_header, write_f64s, write_header, Provenance};
use vpc_model::Vec6;

use crate::CostateStore;

pub fn write_costate<W: Write>(w: &mut W, store: &CostateStore, prov: &Provenance) -> io::Result<()> {
    write_header(w, b"COST", prov)?;
    let np = store.g.first().map_or(0, Vec::len);
    w.write_u64::<LittleEndian>(np as u64)?;
    w.write_u64::<LittleEndian>(store.n_steps() as u64)?;
    for (g, gg) in store.g.iter().zip(&store.big_g) {
        write_f64s(w, g.iter().copied())?;
        write_f64s(w, gg.iter().flat_map(|v| v.iter().copied()))?;
    }
    Ok(())
}

/// (provenance, g[n][p], ∂_z g[n][p]).
pub type CostateSnapshot = (Provenance, Vec<Vec<f64>>, Vec<Vec<Vec6>>);

pub fn read_costate<R: Read>(r: &mut R) -> io::Result<CostateSnapshot> {
    let prov = read_header(r, b"COST")?;
    let np = r.read_u64::<LittleEndian>()? as usize;
    let nt = r.read_u64::<LittleEndian>()? as usize;
    let mut g = Vec::with_capacity(nt + 1);
    let mut gg = Vec::with_capacity(nt + 1);
    for _ in 0..=nt {
        g.push(read_f64s(r, np)?);
        gg.push(read_f64s(r, 6 * np)?.chunks(6).map(Vec6::from_column_slice).collect());
    }
    Ok((prov, g, gg))
}
