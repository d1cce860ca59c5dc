//! `metts compare`: per-β deviations of a curve file from the oracle and
//! the integrated error over β ∈ [1, 2.5].

use std::fmt;

use anyhow::Result;

use metts_core::ensemble::{error_metric, ThermalCurve, ERROR_WINDOW};
use metts_core::exact::free_fermion_energy;
use metts_core::Boundary;

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub beta: f64,
    pub estimate: f64,
    pub exact: f64,
    pub n_contributing: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    /// `None` when the curve does not cover the error window.
    pub epsilon: Option<f64>,
    /// Largest `|estimate − exact|` over reported points.
    pub max_deviation: f64,
    pub max_deviation_beta: f64,
    pub min_n_contributing: usize,
    /// Smallest member count inside the error window.
    pub min_n_contributing_window: usize,
    pub n_sites: usize,
}

pub fn compare(curve: &ThermalCurve, n: usize, boundary: Boundary) -> Result<CompareReport> {
    let exact = |b: f64| free_fermion_energy(n, b, boundary).expect("valid chain");
    let rows: Vec<CompareRow> = (0..curve.len())
        .map(|k| CompareRow {
            beta: curve.betas[k],
            estimate: curve.energy[k],
            exact: exact(curve.betas[k]),
            n_contributing: curve.n_contributing[k],
        })
        .collect();
    let (mut max_deviation, mut max_deviation_beta) = (0.0, f64::NAN);
    for r in rows.iter().filter(|r| r.estimate.is_finite()) {
        let d = (r.estimate - r.exact).abs();
        if d > max_deviation || max_deviation_beta.is_nan() {
            max_deviation = d;
            max_deviation_beta = r.beta;
        }
    }
    let (lo, hi) = ERROR_WINDOW;
    Ok(CompareReport {
        epsilon: error_metric(curve, exact).ok(),
        max_deviation,
        max_deviation_beta,
        min_n_contributing: rows.iter().map(|r| r.n_contributing).min().unwrap_or(0),
        min_n_contributing_window: rows
            .iter()
            .filter(|r| r.beta >= lo && r.beta <= hi)
            .map(|r| r.n_contributing)
            .min()
            .unwrap_or(0),
        n_sites: n,
        rows,
    })
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "beta,energy_estimate,energy_exact,abs_error,n_contributing"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{}",
                r.beta,
                r.estimate,
                r.exact,
                (r.estimate - r.exact).abs(),
                r.n_contributing
            )?;
        }
        match self.epsilon {
            Some(e) => writeln!(f, "# epsilon = {e}")?,
            None => writeln!(
                f,
                "# epsilon = unavailable (curve does not cover beta in [1, 2.5])"
            )?,
        }
        writeln!(
            f,
            "# max_deviation = {} at beta = {} ({} per site)",
            self.max_deviation,
            self.max_deviation_beta,
            self.max_deviation / self.n_sites as f64
        )?;
        writeln!(f, "# min_n_contributing = {}", self.min_n_contributing)?;
        writeln!(
            f,
            "# min_n_contributing_in_error_window = {}",
            self.min_n_contributing_window
        )
    }
}
