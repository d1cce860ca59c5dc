//! `metts oracle`: exact thermal energies on a β grid.

use std::fmt::Write;

use anyhow::Result;

use metts_core::exact::{ed_energy, free_fermion_energy};
use metts_core::Boundary;

/// One row per β with the free-fermion energy and, if `with_ed`, the
/// exact-diagonalization energy (N ≤ 12).
pub fn oracle_table(n: usize, boundary: Boundary, grid: &[f64], with_ed: bool) -> Result<String> {
    let mut out = String::new();
    out.push_str(if with_ed {
        "beta,energy_exact,energy_ed\n"
    } else {
        "beta,energy_exact\n"
    });
    for &b in grid {
        let e = free_fermion_energy(n, b, boundary)?;
        write!(out, "{b},{e}")?;
        if with_ed {
            write!(out, ",{}", ed_energy(n, b, boundary)?)?;
        }
        out.push('\n');
    }
    Ok(out)
}
