//! `metts run`: evolves the ensemble members on a worker pool, persists
//! per-member artifacts, and writes the thermal curve and manifest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use metts_core::ensemble::{
    check_coverage, run_member, tally, thermal_average, EnsembleConfig, EnsembleMember,
    ThermalCurve,
};
use metts_core::exact::free_fermion_energy;
use metts_core::io::{
    read_trajectory_with_meta, write_curve, write_derived, write_trajectory_with_meta,
};
use metts_core::lattice::XyChain;
use metts_core::snapshot::write_snapshot;

use crate::config::RunConfig;

/// Environment variable that sets the worker count when `--workers` is absent.
pub const WORKERS_ENV: &str = "METTS_WORKERS";

pub const CURVE_FILE: &str = "curve.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MEMBERS_DIR: &str = "members";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; falls back to [`WORKERS_ENV`], then to the number of
    /// CPUs.
    pub workers: Option<usize>,
    pub quiet: bool,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub directory: PathBuf,
    pub curve: ThermalCurve,
    pub members: Vec<EnsembleMember>,
    pub reused: usize,
    pub computed: usize,
}

impl RunSummary {
    pub fn curve_path(&self) -> PathBuf {
        self.directory.join(CURVE_FILE)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    run: RunEntry,
    tallies: BTreeMap<String, usize>,
    members: Vec<MemberEntry>,
    config: &'a RunConfig,
}

#[derive(Serialize)]
struct RunEntry {
    config_hash: String,
    member_hash: String,
    code_version: &'static str,
    workers: usize,
    n_states: usize,
    computed: usize,
    reused: usize,
    wall_time_seconds: f64,
    omitted_betas: Vec<f64>,
}

#[derive(Serialize)]
struct MemberEntry {
    id: u64,
    seed: u64,
    term_reason: String,
    steps: usize,
    usable_len: usize,
    beta_max: f64,
    reused: bool,
    wall_time_seconds: f64,
}

pub fn resolve_workers(explicit: Option<usize>) -> Result<usize> {
    if let Some(w) = explicit {
        anyhow::ensure!(w > 0, "--workers must be positive");
        return Ok(w);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => {
            let w: usize = v
                .trim()
                .parse()
                .with_context(|| format!("{WORKERS_ENV}='{v}' is not a positive integer"))?;
            anyhow::ensure!(w > 0, "{WORKERS_ENV} must be positive");
            Ok(w)
        }
        Err(_) => Ok(std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)),
    }
}

fn member_stem(dir: &Path, id: u64) -> PathBuf {
    dir.join(MEMBERS_DIR).join(format!("member_{id:05}"))
}

/// Writes through a temporary file and renames, so an interrupted run never
/// leaves a truncated artifact behind.
fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(
            File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?,
        );
        f(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

/// Loads a stored trajectory if it was produced with `member_hash`.
fn cached_steps(path: &Path, member_hash: &str) -> Option<Vec<metts_core::StepRecord>> {
    let file = File::open(path).ok()?;
    let (steps, meta) = read_trajectory_with_meta(BufReader::new(file)).ok()?;
    meta.iter()
        .any(|(k, v)| k == "member_hash" && v == member_hash)
        .then_some(steps)
}

struct MemberOutcome {
    member: EnsembleMember,
    reused: bool,
    seconds: f64,
}

fn process_member(
    model: &XyChain<f64>,
    ens: &EnsembleConfig,
    dir: &Path,
    member_hash: &str,
    id: u64,
    quiet: bool,
) -> Result<MemberOutcome> {
    let start = Instant::now();
    let stem = member_stem(dir, id);
    let traj_path = stem.with_extension("trajectory.csv");
    let (seed, steps, reused) = match cached_steps(&traj_path, member_hash) {
        Some(steps) => (
            metts_core::ensemble::member_seed(ens.master_seed, id),
            steps,
            true,
        ),
        None => {
            let run = run_member(model, ens, id).with_context(|| format!("member {id}"))?;
            let meta = [
                ("member_hash", member_hash.to_string()),
                ("id", id.to_string()),
                ("seed", run.seed.to_string()),
            ];
            write_atomic(&traj_path, |w| {
                Ok(write_trajectory_with_meta(w, &run.steps, &meta)?)
            })?;
            write_atomic(&stem.with_extension("lstm"), |w| {
                Ok(write_snapshot(&run.final_state, w)?)
            })?;
            (run.seed, run.steps, false)
        }
    };
    let member = EnsembleMember::analyze(id, seed, steps, &ens.rules, ens.n_steps)?;
    write_atomic(&stem.with_extension("derived.csv"), |w| {
        Ok(write_derived(w, &member, &ens.beta_grid, ens.clamp)?)
    })?;
    let seconds = start.elapsed().as_secs_f64();
    if !quiet {
        eprintln!(
            "member {id:>5}: {:>4} steps, {:<13} beta_max {:.3}{}",
            member.trajectory.steps.len(),
            member.term_reason.as_str(),
            member.beta_max().unwrap_or(f64::NAN),
            if reused { " (reused)" } else { "" }
        );
    }
    Ok(MemberOutcome {
        member,
        reused,
        seconds,
    })
}

/// Runs (or resumes) the ensemble described by `cfg`.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    let start = Instant::now();
    let workers = resolve_workers(opts.workers)?;
    let dir = cfg.output.directory.clone();
    fs::create_dir_all(dir.join(MEMBERS_DIR))
        .with_context(|| format!("creating {}", dir.display()))?;
    let model = XyChain::new(cfg.model.n_sites, cfg.boundary())?;
    let ens = cfg.ensemble_config()?;
    ens.validate()?;
    let member_hash = cfg.member_hash();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()?;
    let outcomes = pool.install(|| {
        (0..ens.n_states as u64)
            .into_par_iter()
            .map(|id| process_member(&model, &ens, &dir, &member_hash, id, opts.quiet))
            .collect::<Result<Vec<_>>>()
    })?;

    let members: Vec<EnsembleMember> = outcomes.iter().map(|o| o.member.clone()).collect();
    let n = cfg.model.n_sites;
    let boundary = cfg.boundary();
    let curve = thermal_average(&members, &ens.beta_grid, ens.clamp)
        .with_exact(|b| free_fermion_energy(n, b, boundary).expect("valid chain"));
    check_coverage(&members, &curve)?;
    write_atomic(&dir.join(CURVE_FILE), |w| Ok(write_curve(w, &curve)?))?;

    let reused = outcomes.iter().filter(|o| o.reused).count();
    let computed = outcomes.len() - reused;
    let manifest = Manifest {
        run: RunEntry {
            config_hash: cfg.hash(),
            member_hash,
            code_version: env!("CARGO_PKG_VERSION"),
            workers,
            n_states: ens.n_states,
            computed,
            reused,
            wall_time_seconds: start.elapsed().as_secs_f64(),
            omitted_betas: curve.omitted(),
        },
        tallies: tally(&members)
            .into_iter()
            .map(|(r, c)| (r.as_str().to_string(), c))
            .collect(),
        members: outcomes
            .iter()
            .map(|o| MemberEntry {
                id: o.member.id,
                seed: o.member.seed,
                term_reason: o.member.term_reason.as_str().to_string(),
                steps: o.member.trajectory.steps.len(),
                usable_len: o.member.usable_len,
                beta_max: o.member.beta_max().unwrap_or(f64::NAN),
                reused: o.reused,
                wall_time_seconds: o.seconds,
            })
            .collect(),
        config: cfg,
    };
    let text = toml::to_string(&manifest).context("serializing manifest")?;
    write_atomic(&dir.join(MANIFEST_FILE), |w| {
        Ok(w.write_all(text.as_bytes())?)
    })?;

    Ok(RunSummary {
        directory: dir,
        curve,
        members,
        reused,
        computed,
    })
}
