//! Experiment driver binding the torus-lab modules: named experiments,
//! structured configuration, deterministic seeding, CSV/JSON emission, and
//! exit-code contracts for CI (0 = all criteria pass, 1 = numerical
//! failure, 2 = invalid configuration).

pub mod config;
pub mod experiments;

use clap::Parser;
use config::{load_file, resolve, RawConfig, ValidationReport};
use serde::Serialize;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Parser, Debug)]
#[command(
    name = "qmfd",
    about = "Desk-scale verification lab for mean-field Bose gases with three-body interactions"
)]
pub struct Cli {
    /// Experiment name (conserve, gap, kernels, bogoliubov, pairing,
    /// errorbounds, truncated, fewbody, sobolev)
    #[arg(long)]
    pub experiment: Option<String>,
    /// TOML configuration file; flags override file values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default out/<experiment>)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker cap for internal parallelism (0 = all cores)
    #[arg(long)]
    pub jobs: Option<usize>,
    /// RNG seed for randomized certifications
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub grid_n: Option<usize>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub support_radius: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// pair_product_sum | triple_product
    #[arg(long)]
    pub form: Option<String>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    /// Comma-separated rescaling sweep, e.g. 16,64,256
    #[arg(long)]
    pub n_list: Option<String>,
    #[arg(long)]
    pub m_modes: Option<usize>,
    #[arg(long)]
    pub p_cut: Option<usize>,
    #[arg(long)]
    pub m_sector: Option<usize>,
    /// "auto" or a positive number
    #[arg(long)]
    pub eta: Option<String>,
    #[arg(long)]
    pub n_phys: Option<u64>,
    #[arg(long)]
    pub sites_per_dim: Option<usize>,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    experiment: &'a str,
    pass: bool,
    criteria: &'a [experiments::CriterionResult],
    config: &'a config::ExperimentConfig,
    wall_time_s: f64,
    outputs: Vec<String>,
}

fn merge(cli: &Cli, mut raw: RawConfig) -> RawConfig {
    if cli.experiment.is_some() {
        raw.experiment = cli.experiment.clone();
    }
    if cli.seed.is_some() {
        raw.seed = cli.seed;
    }
    if cli.out.is_some() {
        raw.out = cli.out.clone();
    }
    if cli.jobs.is_some() {
        raw.jobs = cli.jobs;
    }
    if cli.grid_n.is_some() {
        raw.grid.n_per_dim = cli.grid_n;
    }
    if cli.amplitude.is_some() {
        raw.potential.amplitude = cli.amplitude;
    }
    if cli.support_radius.is_some() {
        raw.potential.support_radius = cli.support_radius;
    }
    if cli.beta.is_some() {
        raw.potential.beta = cli.beta;
    }
    if cli.form.is_some() {
        raw.potential.form = cli.form.clone();
    }
    if cli.dt.is_some() {
        raw.time.dt = cli.dt;
    }
    if cli.t_final.is_some() {
        raw.time.t_final = cli.t_final;
    }
    if let Some(list) = &cli.n_list {
        raw.sweep.n_list = Some(
            list.split(',')
                .filter_map(|t| t.trim().parse::<u64>().ok())
                .collect(),
        );
    }
    if cli.m_modes.is_some() {
        raw.fock.m_modes = cli.m_modes;
    }
    if cli.p_cut.is_some() {
        raw.fock.p_cut = cli.p_cut;
    }
    if cli.m_sector.is_some() {
        raw.fock.m_sector = cli.m_sector;
    }
    if cli.eta.is_some() {
        raw.fock.eta_policy = cli.eta.clone();
    }
    if cli.n_phys.is_some() {
        raw.fock.n_phys = cli.n_phys;
    }
    if cli.sites_per_dim.is_some() {
        raw.lattice.sites_per_dim = cli.sites_per_dim;
    }
    raw
}

fn emit_validation_failure(report: &ValidationReport) -> i32 {
    let json = serde_json::json!({
        "schema_version": 1,
        "error": "invalid configuration",
        "validation": report,
    });
    eprintln!("{}", serde_json::to_string_pretty(&json).unwrap());
    2
}

pub fn run_cli(cli: &Cli) -> i32 {
    let raw = match &cli.config {
        Some(path) => match load_file(path) {
            Ok(raw) => raw,
            Err(e) => {
                return emit_validation_failure(&ValidationReport { errors: vec![e] });
            }
        },
        None => RawConfig::default(),
    };
    let raw = merge(cli, raw);
    let cfg = match resolve(&raw) {
        Ok(cfg) => cfg,
        Err(report) => return emit_validation_failure(&report),
    };
    if cfg.jobs > 0 {
        // best effort; a pool may already exist in test harnesses
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global();
    }

    let started = Instant::now();
    match experiments::run(&cfg) {
        Ok(outcome) => {
            let pass = outcome.all_pass();
            let summary = Summary {
                schema_version: 1,
                experiment: &cfg.experiment,
                pass,
                criteria: &outcome.criteria,
                config: &cfg,
                wall_time_s: started.elapsed().as_secs_f64(),
                outputs: outcome
                    .outputs
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect(),
            };
            let json = serde_json::to_string_pretty(&summary).expect("serializable");
            let path = cfg.out.join("summary.json");
            if std::fs::write(&path, &json).is_err() {
                eprintln!("could not write {path:?}");
            }
            println!("{json}");
            if pass {
                0
            } else {
                if let Some(fail) = outcome.first_failure() {
                    eprintln!(
                        "criterion failed: {} = {} (expected {})",
                        fail.name, fail.value, fail.threshold
                    );
                }
                1
            }
        }
        Err(e) => {
            eprintln!("numerical failure: {e}");
            1
        }
    }
}
