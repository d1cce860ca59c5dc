//! Delimited text formats for member artifacts and thermal curves.
//!
//! Every table starts with a `# <kind> v<version>` line followed by a
//! header row. Floats are written with Rust's shortest round-trip
//! formatting, so reading a file back reproduces the values bit for bit.

use std::io::{BufRead, Write};

use crate::ensemble::{ClampPolicy, EnsembleMember, ThermalCurve};
use crate::error::{Error, Result};
use crate::tdvp::StepRecord;

pub const TRAJECTORY_VERSION: u32 = 1;
pub const DERIVED_VERSION: u32 = 1;
pub const CURVE_VERSION: u32 = 1;

const TRAJECTORY_COLUMNS: [&str; 5] = ["tau", "energy", "h2", "grad_norm", "terminated"];
const CURVE_COLUMNS: [&str; 4] = ["beta", "energy_estimate", "n_contributing", "energy_exact"];

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| format_err(format!("line {line}: '{field}' is not a number")))
}

type Table = (Vec<String>, Vec<(usize, String)>, Vec<(String, String)>);

/// Reads the version line and the header; returns the header fields, the
/// remaining data lines with their 1-based line numbers, and any
/// `# key=value` lines before the header.
fn read_table<R: BufRead>(r: R, kind: &str, version: u32) -> Result<Table> {
    let mut lines = r.lines().enumerate();
    let expected = format!("# {kind} v{version}");
    match lines.next() {
        Some((_, l)) if l.as_ref().map(|s| s.trim() == expected).unwrap_or(false) => {}
        Some((_, Err(e))) => return Err(e.into()),
        _ => return Err(format_err(format!("missing '{expected}' line"))),
    }
    let mut header = None;
    let mut rows = Vec::new();
    let mut meta = Vec::new();
    for (k, line) in lines {
        let line = line?;
        let t = line.trim();
        if let Some(c) = t.strip_prefix('#') {
            if header.is_none() {
                if let Some((key, v)) = c.trim().split_once('=') {
                    meta.push((key.trim().to_string(), v.trim().to_string()));
                }
            }
            continue;
        }
        if t.is_empty() {
            continue;
        }
        if header.is_none() {
            header = Some(t.split(',').map(|s| s.trim().to_string()).collect());
        } else {
            rows.push((k + 1, t.to_string()));
        }
    }
    let header = header.ok_or_else(|| format_err("missing header row"))?;
    Ok((header, rows, meta))
}

/// Writes recorded steps. Observable columns are named `obs0`, `obs1`, ….
pub fn write_trajectory<W: Write>(w: W, steps: &[StepRecord<f64>]) -> Result<()> {
    write_trajectory_with_meta(w, steps, &[])
}

/// Like [`write_trajectory`], with `# key=value` lines after the version
/// line.
pub fn write_trajectory_with_meta<W: Write>(
    mut w: W,
    steps: &[StepRecord<f64>],
    meta: &[(&str, String)],
) -> Result<()> {
    let n_obs = steps.iter().map(|s| s.observables.len()).max().unwrap_or(0);
    writeln!(w, "# trajectory v{TRAJECTORY_VERSION}")?;
    for (k, v) in meta {
        writeln!(w, "# {k}={v}")?;
    }
    let mut header = TRAJECTORY_COLUMNS.join(",");
    for k in 0..n_obs {
        header.push_str(&format!(",obs{k}"));
    }
    writeln!(w, "{header}")?;
    for s in steps {
        write!(
            w,
            "{},{},{},{},{}",
            s.tau,
            s.energy,
            s.h2,
            s.grad_norm,
            u8::from(s.terminated)
        )?;
        for k in 0..n_obs {
            write!(w, ",{}", s.observables.get(k).copied().unwrap_or(f64::NAN))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_trajectory<R: BufRead>(r: R) -> Result<Vec<StepRecord<f64>>> {
    Ok(read_trajectory_with_meta(r)?.0)
}

/// Reads a trajectory and its `# key=value` lines.
pub fn read_trajectory_with_meta<R: BufRead>(
    r: R,
) -> Result<(Vec<StepRecord<f64>>, Vec<(String, String)>)> {
    let (header, rows, meta) = read_table(r, "trajectory", TRAJECTORY_VERSION)?;
    if header.len() < TRAJECTORY_COLUMNS.len() || header[..5] != TRAJECTORY_COLUMNS {
        return Err(format_err(format!(
            "unexpected trajectory header {header:?}"
        )));
    }
    let n_obs = header.len() - TRAJECTORY_COLUMNS.len();
    let mut steps = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let f: Vec<&str> = row.split(',').collect();
        if f.len() != header.len() {
            return Err(format_err(format!(
                "line {line}: expected {} fields, got {}",
                header.len(),
                f.len()
            )));
        }
        let terminated = match f[4].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(format_err(format!(
                    "line {line}: terminated flag '{other}'"
                )))
            }
        };
        steps.push(StepRecord {
            tau: parse_f64(f[0], line)?,
            energy: parse_f64(f[1], line)?,
            h2: parse_f64(f[2], line)?,
            grad_norm: parse_f64(f[3], line)?,
            terminated,
            observables: f[5..5 + n_obs]
                .iter()
                .map(|v| parse_f64(v, line))
                .collect::<Result<_>>()?,
        });
    }
    Ok((steps, meta))
}

/// Writes the reparameterized trajectory of a member and its weights on
/// `grid`. Rows beyond the member's finite prefix are not written.
pub fn write_derived<W: Write>(
    mut w: W,
    member: &EnsembleMember,
    grid: &[f64],
    policy: ClampPolicy,
) -> Result<()> {
    writeln!(w, "# derived v{DERIVED_VERSION}")?;
    writeln!(
        w,
        "# id={} seed={} usable_len={} term_reason={}",
        member.id, member.seed, member.usable_len, member.term_reason
    )?;
    writeln!(w, "tau,beta,smoothed_energy,smoothed_h2,usable")?;
    let t = &member.trajectory;
    for (k, b) in member.beta_of_tau.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{}",
            t.steps[k].tau,
            b,
            t.smoothed_energy[k],
            t.smoothed_h2[k],
            u8::from(k < member.usable_len)
        )?;
    }
    writeln!(w, "# weights")?;
    writeln!(w, "# beta,log_z,energy")?;
    for &b in grid {
        if let Some(p) = member.point(b, policy) {
            writeln!(w, "# {b},{},{}", p.log_z, p.energy)?;
        }
    }
    Ok(())
}

/// Writes one row per grid point. Points without contributing members are
/// kept, with `NaN` energy and `n_contributing = 0`.
pub fn write_curve<W: Write>(mut w: W, curve: &ThermalCurve) -> Result<()> {
    writeln!(w, "# curve v{CURVE_VERSION}")?;
    let omitted = curve.omitted();
    if !omitted.is_empty() {
        let list: Vec<String> = omitted.iter().map(|b| b.to_string()).collect();
        writeln!(w, "# omitted beta: {}", list.join(" "))?;
    }
    let cols = if curve.exact.is_some() { 4 } else { 3 };
    writeln!(w, "{}", CURVE_COLUMNS[..cols].join(","))?;
    for k in 0..curve.len() {
        write!(
            w,
            "{},{},{}",
            curve.betas[k], curve.energy[k], curve.n_contributing[k]
        )?;
        if let Some(ex) = &curve.exact {
            write!(w, ",{}", ex[k])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Reads a curve file. Standard errors are not stored and come back as
/// `NaN`.
pub fn read_curve<R: BufRead>(r: R) -> Result<ThermalCurve> {
    let (header, rows, _) = read_table(r, "curve", CURVE_VERSION)?;
    let cols = header.len();
    if !(cols == 3 || cols == 4) || header[..] != CURVE_COLUMNS[..cols] {
        return Err(format_err(format!("unexpected curve header {header:?}")));
    }
    let mut curve = ThermalCurve {
        betas: vec![],
        energy: vec![],
        n_contributing: vec![],
        std_error: vec![],
        exact: (cols == 4).then(Vec::new),
    };
    for (line, row) in rows {
        let f: Vec<&str> = row.split(',').collect();
        if f.len() != cols {
            return Err(format_err(format!(
                "line {line}: expected {cols} fields, got {}",
                f.len()
            )));
        }
        curve.betas.push(parse_f64(f[0], line)?);
        curve.energy.push(parse_f64(f[1], line)?);
        curve.n_contributing.push(
            f[2].trim()
                .parse()
                .map_err(|_| format_err(format!("line {line}: bad count '{}'", f[2])))?,
        );
        curve.std_error.push(f64::NAN);
        if let Some(ex) = curve.exact.as_mut() {
            ex.push(parse_f64(f[3], line)?);
        }
    }
    Ok(curve)
}
