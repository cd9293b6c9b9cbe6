//! Experiment configuration: TOML file + flag overrides, per-experiment
//! defaults, and upfront validation against the module preconditions.

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

pub const EXPERIMENTS: &[&str] = &[
    "conserve",
    "gap",
    "kernels",
    "bogoliubov",
    "pairing",
    "errorbounds",
    "truncated",
    "fewbody",
    "sobolev",
];

/// Parsed-but-unresolved configuration: every field optional so that
/// per-experiment defaults can fill the gaps (flags override file values).
#[derive(Clone, Debug, Default, Deserialize)]
pub struct RawConfig {
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    #[serde(default)]
    pub grid: RawGrid,
    #[serde(default)]
    pub potential: RawPotential,
    #[serde(default)]
    pub time: RawTime,
    #[serde(default)]
    pub sweep: RawSweep,
    #[serde(default)]
    pub fock: RawFock,
    #[serde(default)]
    pub lattice: RawLattice,
}

#[derive(Clone, Debug, Default, Deserialize)]
pub struct RawGrid {
    pub n_per_dim: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
pub struct RawPotential {
    pub amplitude: Option<f64>,
    pub support_radius: Option<f64>,
    pub beta: Option<f64>,
    pub form: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
pub struct RawTime {
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
pub struct RawSweep {
    pub n_list: Option<Vec<u64>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
pub struct RawFock {
    pub m_modes: Option<usize>,
    pub p_cut: Option<usize>,
    pub m_sector: Option<usize>,
    /// "auto" or a positive number
    pub eta_policy: Option<String>,
    pub n_phys: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
pub struct RawLattice {
    pub sites_per_dim: Option<usize>,
}

/// Fully resolved configuration (echoed into every JSON summary).
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
    pub grid_n: usize,
    pub amplitude: f64,
    pub support_radius: f64,
    pub beta: f64,
    pub form: String,
    pub dt: f64,
    pub t_final: f64,
    pub n_list: Vec<u64>,
    pub m_modes: usize,
    pub p_cut: usize,
    pub m_sector: usize,
    pub eta_policy: String,
    pub n_phys: u64,
    pub sites_per_dim: usize,
}

/// Per-experiment defaults; everything the user does not set.
struct Defaults {
    grid_n: usize,
    amplitude: f64,
    support_radius: f64,
    beta: f64,
    dt: f64,
    t_final: f64,
    n_list: &'static [u64],
    m_modes: usize,
    p_cut: usize,
    m_sector: usize,
    n_phys: u64,
    sites_per_dim: usize,
}

fn defaults_for(experiment: &str) -> Defaults {
    let base = Defaults {
        grid_n: 32,
        amplitude: 40.0,
        support_radius: 2.0,
        beta: 0.15,
        dt: 1e-3,
        t_final: 1.0,
        n_list: &[16, 64, 256, 1024],
        m_modes: 6,
        p_cut: 8,
        m_sector: 3,
        n_phys: 16,
        sites_per_dim: 4,
    };
    match experiment {
        "gap" => Defaults {
            t_final: 0.5,
            ..base
        },
        "kernels" => Defaults {
            grid_n: 16,
            n_list: &[8, 32, 128],
            ..base
        },
        "bogoliubov" => Defaults {
            grid_n: 16,
            amplitude: 12.0,
            n_list: &[8, 32, 128],
            ..base
        },
        "pairing" => base,
        "errorbounds" => Defaults {
            grid_n: 16,
            amplitude: 12.0,
            beta: 0.1,
            m_modes: 4,
            p_cut: 6,
            m_sector: 3,
            n_list: &[64, 256, 1024],
            ..base
        },
        "truncated" => Defaults {
            grid_n: 16,
            amplitude: 12.0,
            t_final: 0.5,
            n_phys: 10_000,
            ..base
        },
        "fewbody" => Defaults {
            t_final: 0.2,
            amplitude: 3.0,
            beta: 0.12,
            n_phys: 3,
            ..base
        },
        "sobolev" => Defaults {
            grid_n: 16,
            n_list: &[8, 64, 512],
            ..base
        },
        _ => base,
    }
}

/// Validation failures, reported machine-readably at exit code 2.
#[derive(Debug, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
}

pub fn resolve(raw: &RawConfig) -> Result<ExperimentConfig, ValidationReport> {
    let mut errors = Vec::new();
    let experiment = raw.experiment.clone().unwrap_or_default();
    if !EXPERIMENTS.contains(&experiment.as_str()) {
        errors.push(format!(
            "unknown experiment '{experiment}'; expected one of {EXPERIMENTS:?}"
        ));
        return Err(ValidationReport { errors });
    }
    let d = defaults_for(&experiment);
    let cfg = ExperimentConfig {
        experiment: experiment.clone(),
        seed: raw.seed.unwrap_or(7),
        out: raw
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("out/{experiment}"))),
        jobs: raw.jobs.unwrap_or(0),
        grid_n: raw.grid.n_per_dim.unwrap_or(d.grid_n),
        amplitude: raw.potential.amplitude.unwrap_or(d.amplitude),
        support_radius: raw.potential.support_radius.unwrap_or(d.support_radius),
        beta: raw.potential.beta.unwrap_or(d.beta),
        form: raw
            .potential
            .form
            .clone()
            .unwrap_or_else(|| "pair_product_sum".into()),
        dt: raw.time.dt.unwrap_or(d.dt),
        t_final: raw.time.t_final.unwrap_or(d.t_final),
        n_list: raw.sweep.n_list.clone().unwrap_or_else(|| d.n_list.to_vec()),
        m_modes: raw.fock.m_modes.unwrap_or(d.m_modes),
        p_cut: raw.fock.p_cut.unwrap_or(d.p_cut),
        m_sector: raw.fock.m_sector.unwrap_or(d.m_sector),
        eta_policy: raw.fock.eta_policy.clone().unwrap_or_else(|| "auto".into()),
        n_phys: raw.fock.n_phys.unwrap_or(d.n_phys),
        sites_per_dim: raw.lattice.sites_per_dim.unwrap_or(d.sites_per_dim),
    };

    // module preconditions, checked before any computation starts
    if cfg.grid_n < 8 || cfg.grid_n % 2 != 0 {
        errors.push(format!("grid.n_per_dim must be even and ≥ 8, got {}", cfg.grid_n));
    }
    if cfg.amplitude < 0.0 {
        errors.push("potential.amplitude must be ≥ 0".into());
    }
    if cfg.support_radius <= 0.0 || cfg.support_radius >= std::f64::consts::PI {
        errors.push(format!(
            "potential.support_radius must lie in (0, π), got {}",
            cfg.support_radius
        ));
    }
    if cfg.beta <= 0.0 || cfg.beta >= 1.0 / 6.0 {
        errors.push(format!("potential.beta must lie in (0, 1/6), got {}", cfg.beta));
    }
    if !(cfg.form == "pair_product_sum" || cfg.form == "triple_product") {
        errors.push(format!("potential.form '{}' unknown", cfg.form));
    }
    if cfg.dt <= 0.0 || cfg.t_final <= 0.0 || cfg.dt > cfg.t_final {
        errors.push(format!(
            "time must satisfy 0 < dt ≤ t_final (dt = {}, t_final = {})",
            cfg.dt, cfg.t_final
        ));
    }
    if cfg.n_list.is_empty() || cfg.n_list.iter().any(|&n| n == 0) {
        errors.push("sweep.n_list must be nonempty positive integers".into());
    }
    if cfg.m_modes == 0 || cfg.m_modes > 8 || cfg.m_modes % 2 != 0 {
        errors.push(format!(
            "fock.m_modes must be even and in [2, 8], got {}",
            cfg.m_modes
        ));
    }
    if cfg.p_cut == 0 || cfg.p_cut > 8 {
        errors.push(format!("fock.p_cut must lie in [1, 8], got {}", cfg.p_cut));
    }
    if cfg.experiment == "errorbounds" && cfg.m_sector + 3 > cfg.p_cut {
        errors.push(format!(
            "errorbounds needs m_sector ≤ p_cut − 3 (m_sector = {}, p_cut = {})",
            cfg.m_sector, cfg.p_cut
        ));
    }
    if cfg.eta_policy != "auto" && cfg.eta_policy.parse::<f64>().map(|v| v <= 0.0).unwrap_or(true)
    {
        errors.push(format!(
            "fock.eta_policy must be 'auto' or a positive number, got '{}'",
            cfg.eta_policy
        ));
    }
    if !(4..=6).contains(&cfg.sites_per_dim) {
        errors.push(format!(
            "lattice.sites_per_dim must lie in [4, 6], got {}",
            cfg.sites_per_dim
        ));
    }
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ValidationReport { errors })
    }
}

pub fn load_file(path: &std::path::Path) -> Result<RawConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("reading {path:?}: {e}"))?;
    toml::from_str(&text).map_err(|e| format!("parsing {path:?}: {e}"))
}
