//! The experiment registry: each experiment runs one verification campaign,
//! writes CSV artifacts plus a JSON summary, and reports pass/fail per
//! criterion.

use crate::config::ExperimentConfig;
use ndarray::Array2;
use num_complex::Complex64;
use qmfd_core::bogoliubov::{
    build_kernels, certify_pairing_bound, evolve_density_matrices, kernel_scaling_report,
    BogoliubovState, ModeBasis,
};
use qmfd_core::fewbody::{
    build_hamiltonian, generator_equivalence_check, reduced_density, un_transform, FewBodyBasis,
    FewBodyState, Lattice,
};
use qmfd_core::fock::{
    assemble_generator, certify_error_bounds, eta_threshold, evolve_truncated, FockBasis,
    FockVector,
};
use qmfd_core::grid::{Field, TorusGrid};
use qmfd_core::hartree::{
    energy, evolve, hartree_nls_gap, smooth_initial, EvolutionProblem, EvolveOptions, GapCoupling,
    NonlinearKind,
};
use qmfd_core::io::{fmt_f64, CsvTable};
use qmfd_core::linalg::{hermitian_eigenvalues, loglog_slope};
use qmfd_core::potential::{PairProfile, PotentialForm, ThreeBodyPotential};
use qmfd_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Clone, Debug, serde::Serialize)]
pub struct CriterionResult {
    pub name: String,
    pub value: f64,
    pub threshold: String,
    pub pass: bool,
}

pub struct ExperimentOutcome {
    pub criteria: Vec<CriterionResult>,
    pub outputs: Vec<PathBuf>,
}

impl ExperimentOutcome {
    pub fn all_pass(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }

    pub fn first_failure(&self) -> Option<&CriterionResult> {
        self.criteria.iter().find(|c| !c.pass)
    }
}

fn crit(name: &str, value: f64, threshold: &str, pass: bool) -> CriterionResult {
    CriterionResult {
        name: name.to_string(),
        value,
        threshold: threshold.to_string(),
        pass,
    }
}

fn potential_from(cfg: &ExperimentConfig, n_scaling: u64) -> Result<ThreeBodyPotential<f64>> {
    let profile = PairProfile::new(cfg.amplitude, cfg.support_radius)?;
    let form = match cfg.form.as_str() {
        "triple_product" => PotentialForm::TripleProduct,
        _ => PotentialForm::PairProductSum,
    };
    ThreeBodyPotential::new(form, profile, cfg.beta, n_scaling)
}

fn grid_from(cfg: &ExperimentConfig) -> Result<Arc<TorusGrid<f64>>> {
    TorusGrid::new(cfg.grid_n)
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    std::fs::create_dir_all(&cfg.out)?;
    match cfg.experiment.as_str() {
        "conserve" => run_conserve(cfg),
        "gap" => run_gap(cfg),
        "kernels" => run_kernels(cfg),
        "bogoliubov" => run_bogoliubov(cfg),
        "pairing" => run_pairing(cfg),
        "errorbounds" => run_errorbounds(cfg),
        "truncated" => run_truncated(cfg),
        "fewbody" => run_fewbody(cfg),
        "sobolev" => run_sobolev(cfg),
        other => Err(Error::InvalidProblem(format!("unknown experiment {other}"))),
    }
}

// ---------------------------------------------------------------- conserve

fn run_conserve(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let grid = grid_from(cfg)?;
    let potential = potential_from(cfg, cfg.n_phys)?;
    let u0 = smooth_initial(&grid);
    let b0 = potential.coupling_b0_grid(&grid)?;
    let mut outputs = Vec::new();
    let mut criteria = Vec::new();

    for (label, kind) in [
        (
            "hartree",
            NonlinearKind::QuinticHartree {
                potential: potential.clone(),
            },
        ),
        ("nls", NonlinearKind::QuinticNls { b0 }),
    ] {
        let problem = EvolutionProblem::new(kind.clone(), u0.clone(), cfg.t_final, cfg.dt)?;
        let traj = evolve(
            &problem,
            EvolveOptions {
                monitor_stride: 10,
                snapshot_stride: 0,
            },
        )?;
        let mut table = CsvTable::new(&["time", "mass", "energy", "h1", "h2", "h4", "linf"]);
        for m in &traj.monitors {
            table.push(vec![
                fmt_f64(m.time),
                fmt_f64(m.mass),
                fmt_f64(m.energy),
                fmt_f64(m.h1),
                fmt_f64(m.h2),
                fmt_f64(m.h4),
                fmt_f64(m.linf),
            ]);
        }
        let path = cfg.out.join(format!("conserve_{label}.csv"));
        table.write_to(&path)?;
        outputs.push(path);

        let mass_drift = traj
            .monitors
            .iter()
            .map(|m| (m.mass - 1.0).abs())
            .fold(0.0f64, f64::max);
        let e0 = traj.monitors.first().unwrap().energy;
        let energy_drift = traj
            .monitors
            .iter()
            .map(|m| ((m.energy - e0) / e0).abs())
            .fold(0.0f64, f64::max);
        criteria.push(crit(
            &format!("{label}_mass_drift"),
            mass_drift,
            "<= 1e-10",
            mass_drift <= 1e-10,
        ));
        criteria.push(crit(
            &format!("{label}_energy_drift_rel"),
            energy_drift,
            "<= 1e-6",
            energy_drift <= 1e-6,
        ));
        criteria.push(crit(
            &format!("{label}_h4_bounded"),
            if traj.h4_warning { 1.0 } else { 0.0 },
            "no 10x growth",
            !traj.h4_warning,
        ));

        // endpoint Richardson order on a short horizon
        let t_short = cfg.t_final.min(0.1);
        let run_dt = |dt: f64| -> Result<Field<f64>> {
            let p = EvolutionProblem::new(kind.clone(), u0.clone(), t_short, dt)?;
            Ok(evolve(
                &p,
                EvolveOptions {
                    monitor_stride: usize::MAX,
                    snapshot_stride: 0,
                },
            )?
            .final_state)
        };
        let a = run_dt(2.0 * cfg.dt)?;
        let b = run_dt(cfg.dt)?;
        let c = run_dt(cfg.dt / 2.0)?;
        let ratio = a.l2_distance(&b)? / b.l2_distance(&c)?;
        criteria.push(crit(
            &format!("{label}_richardson_ratio"),
            ratio,
            "in [3.5, 4.5]",
            (3.5..=4.5).contains(&ratio),
        ));
    }

    // constant-data closed form: phase b0^grid (2π)^{-6} t to 1e-10
    let uc = Field::normalized_constant(grid.clone());
    let problem = EvolutionProblem::new(
        NonlinearKind::QuinticHartree {
            potential: potential.clone(),
        },
        uc.clone(),
        cfg.t_final,
        cfg.dt,
    )?;
    let traj = evolve(
        &problem,
        EvolveOptions {
            monitor_stride: usize::MAX,
            snapshot_stride: 0,
        },
    )?;
    let rho = 1.0 / (2.0 * std::f64::consts::PI).powi(3);
    let phase = -b0 * rho * rho * cfg.t_final;
    let mut expect = uc;
    expect.scale(Complex64::new(phase.cos(), phase.sin()));
    let err = traj.final_state.l2_distance(&expect)?;
    criteria.push(crit(
        "constant_data_phase_error",
        err,
        "<= 1e-10",
        err <= 1e-10,
    ));

    Ok(ExperimentOutcome { criteria, outputs })
}

// --------------------------------------------------------------------- gap

fn run_gap(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let grid = grid_from(cfg)?;
    let potential = potential_from(cfg, 1)?;
    let u0 = smooth_initial(&grid);
    let table = hartree_nls_gap(
        &u0,
        &potential,
        &cfg.n_list,
        cfg.t_final,
        cfg.dt,
        GapCoupling::GridMatched,
    )?;

    let mut csv = CsvTable::new(&["n", "resolved", "error", "b0_nls"]);
    for row in &table.rows {
        csv.push(vec![
            row.n_scaling.to_string(),
            (row.resolved as u8).to_string(),
            fmt_f64(row.error),
            fmt_f64(row.b0_nls),
        ]);
    }
    // slope in a footer record
    csv.push(vec![
        "slope".into(),
        "1".into(),
        fmt_f64(table.slope.unwrap_or(f64::NAN)),
        fmt_f64(table.b0_continuum),
    ]);
    let path = cfg.out.join("gap.csv");
    csv.write_to(&path)?;

    let mut criteria = Vec::new();
    let trivially_zero = table.rows.iter().all(|r| r.error < 1e-13);
    if trivially_zero {
        criteria.push(crit("gap_trivially_zero", 0.0, "errors all ~0", true));
    } else {
        let slope = table.slope.unwrap_or(f64::NAN);
        criteria.push(crit(
            "gap_slope",
            slope,
            &format!("<= {}", -cfg.beta + 0.1),
            slope <= -cfg.beta + 0.1,
        ));
        let resolved: Vec<f64> = table
            .rows
            .iter()
            .filter(|r| r.resolved)
            .map(|r| r.error)
            .collect();
        let monotone = resolved.windows(2).all(|w| w[1] <= w[0]);
        criteria.push(crit(
            "gap_monotone_decreasing",
            if monotone { 1.0 } else { 0.0 },
            "errors decrease",
            monotone,
        ));
    }
    Ok(ExperimentOutcome {
        criteria,
        outputs: vec![path],
    })
}

// ----------------------------------------------------------------- kernels

fn run_kernels(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let grid = grid_from(cfg)?;
    let potential = potential_from(cfg, 1)?;
    let u = Field::normalized_constant(grid.clone());
    let len = grid.len();
    let z_samples = [0usize, len / 3, 2 * len / 3];
    let report = kernel_scaling_report(&u, &potential, &cfg.n_list, 0.05, &z_samples)?;

    let mut csv = CsvTable::new(&[
        "n",
        "resolved",
        "hs_k2_tilde",
        "hs_k2_weighted",
        "hs_k2_tilde_34",
        "hs_kz",
    ]);
    for row in &report.rows {
        csv.push(vec![
            row.n_scaling.to_string(),
            (row.resolved as u8).to_string(),
            fmt_f64(row.hs_k2_tilde),
            fmt_f64(row.hs_k2_weighted),
            fmt_f64(row.hs_k2_tilde_34),
            fmt_f64(row.hs_kz),
        ]);
    }
    csv.push(vec![
        "exponent".into(),
        "1".into(),
        fmt_f64(report.fit.k2_tilde.unwrap_or(f64::NAN)),
        fmt_f64(report.fit.k2_weighted.unwrap_or(f64::NAN)),
        fmt_f64(report.fit.k2_tilde_34.unwrap_or(f64::NAN)),
        fmt_f64(report.fit.kz.unwrap_or(f64::NAN)),
    ]);
    let path = cfg.out.join("kernels.csv");
    csv.write_to(&path)?;

    let b = cfg.beta;
    let e_k2t = report.fit.k2_tilde.unwrap_or(f64::NAN);
    let e_k2w = report.fit.k2_weighted.unwrap_or(f64::NAN);
    let e_kz = report.fit.kz.unwrap_or(f64::NAN);
    let criteria = vec![
        crit(
            "exp_k2_tilde_hs2",
            e_k2t,
            &format!("in [{}, {}]", 3.0 * b - 0.3, 3.0 * b + 0.3),
            (3.0 * b - 0.3..=3.0 * b + 0.3).contains(&e_k2t),
        ),
        crit(
            "exp_k2_weighted_hs2",
            e_k2w,
            &format!("<= {}", b + 0.2),
            e_k2w <= b + 0.2,
        ),
        crit(
            "exp_kz_hs2",
            e_kz,
            &format!("in [{}, {}]", 4.0 * b - 0.4, 4.0 * b + 0.4),
            (4.0 * b - 0.4..=4.0 * b + 0.4).contains(&e_kz),
        ),
    ];
    Ok(ExperimentOutcome {
        criteria,
        outputs: vec![path],
    })
}

// -------------------------------------------------------------- bogoliubov

fn run_bogoliubov(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let grid = grid_from(cfg)?;
    let u = Field::normalized_constant(grid.clone());
    let modes = ModeBasis::shell(1)?;
    let weights: Vec<f64> = modes
        .modes()
        .iter()
        .map(|k| 1.0 + (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64)
        .collect();
    let mut outputs = Vec::new();
    let mut criteria = Vec::new();

    // vacuum-start evolution at the configured N
    let potential = potential_from(cfg, cfg.n_phys)?;
    let kern = build_kernels(&u, &potential, &modes)?;
    let (final_state, monitors) = evolve_density_matrices(
        &kern,
        &BogoliubovState::vacuum(modes.len()),
        cfg.dt,
        cfg.t_final,
        &weights,
        20,
    )?;
    let mut csv = CsvTable::new(&[
        "time",
        "trace_gamma",
        "kinetic",
        "purity_error",
        "hermiticity_error",
        "symmetry_error",
    ]);
    for m in &monitors {
        csv.push(vec![
            fmt_f64(m.time),
            fmt_f64(m.trace_gamma),
            fmt_f64(m.kinetic),
            fmt_f64(m.purity_error),
            fmt_f64(m.hermiticity_error),
            fmt_f64(m.symmetry_error),
        ]);
    }
    let path = cfg.out.join("bogoliubov_monitors.csv");
    csv.write_to(&path)?;
    outputs.push(path);

    let max_purity = monitors
        .iter()
        .map(|m| m.purity_error)
        .fold(0.0f64, f64::max);
    criteria.push(crit("purity_error", max_purity, "<= 1e-6", max_purity <= 1e-6));
    let herm = final_state.hermiticity_error().max(final_state.symmetry_error());
    criteria.push(crit("structure_error", herm, "<= 1e-10", herm <= 1e-10));
    let monotone = monitors
        .windows(2)
        .take(10)
        .all(|w| w[1].trace_gamma >= w[0].trace_gamma - 1e-14);
    criteria.push(crit(
        "trace_gamma_nondecreasing_initially",
        if monotone { 1.0 } else { 0.0 },
        "nondecreasing",
        monotone,
    ));

    // two-mode closed form: vacuum-start occupation |κ/λ|² sinh²(λt)
    {
        let (eps, kappa, t) = (0.4f64, 1.0f64, 1.0f64);
        let m = 2;
        let mut h = Array2::zeros((m, m));
        h[(0, 0)] = Complex64::new(eps, 0.0);
        h[(1, 1)] = Complex64::new(eps, 0.0);
        let mut k2 = Array2::zeros((m, m));
        k2[(0, 1)] = Complex64::new(kappa, 0.0);
        k2[(1, 0)] = Complex64::new(kappa, 0.0);
        let kernels = qmfd_core::bogoliubov::PairKernels {
            modes: ModeBasis::first_pairs(2)?,
            h,
            k1: Array2::zeros((m, m)),
            k2,
        };
        let (state, _) = evolve_density_matrices(
            &kernels,
            &BogoliubovState::vacuum(m),
            1e-3,
            t,
            &[1.0, 1.0],
            usize::MAX,
        )?;
        let lam = (kappa * kappa - eps * eps).sqrt();
        let expect = (kappa / lam).powi(2) * (lam * t).sinh().powi(2);
        let err = (state.gamma[(0, 0)].re - expect).abs();
        criteria.push(crit(
            "two_mode_sinh_closed_form",
            err,
            "<= 1e-8",
            err <= 1e-8,
        ));
    }

    // kinetic monitor growth across the N sweep at fixed t
    let mut sweep_csv = CsvTable::new(&["n", "trace_gamma", "kinetic"]);
    let mut pts = Vec::new();
    for &n in &cfg.n_list {
        let vn = potential_from(cfg, n)?;
        let kern = build_kernels(&u, &vn, &modes)?;
        let (_, mons) = evolve_density_matrices(
            &kern,
            &BogoliubovState::vacuum(modes.len()),
            cfg.dt,
            cfg.t_final,
            &weights,
            usize::MAX,
        )?;
        let last = mons.last().unwrap();
        sweep_csv.push(vec![
            n.to_string(),
            fmt_f64(last.trace_gamma),
            fmt_f64(last.kinetic),
        ]);
        pts.push((n as f64, last.kinetic));
    }
    let path = cfg.out.join("bogoliubov_kinetic_sweep.csv");
    sweep_csv.write_to(&path)?;
    outputs.push(path);
    let slope = loglog_slope(&pts).unwrap_or(f64::NAN);
    criteria.push(crit(
        "kinetic_sweep_exponent",
        slope,
        &format!("<= {}", cfg.beta + 0.3),
        slope <= cfg.beta + 0.3,
    ));

    Ok(ExperimentOutcome { criteria, outputs })
}

// ----------------------------------------------------------------- pairing

fn run_pairing(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let mut criteria = Vec::new();
    let mut csv = CsvTable::new(&[
        "instance",
        "min_eig_plus",
        "min_eig_minus",
        "shift",
        "precondition_margin",
    ]);

    // single-mode closed form ½(√3 − 2)
    let h1 = [2.0f64];
    let mut k1 = Array2::zeros((1, 1));
    k1[(0, 0)] = Complex64::new(1.0, 0.0);
    let cert = certify_pairing_bound(&h1, &k1, cfg.p_cut.max(8))?;
    csv.push(vec![
        "closed_form".into(),
        fmt_f64(cert.min_eig_plus),
        fmt_f64(cert.min_eig_minus),
        fmt_f64(cert.shift),
        fmt_f64(cert.precondition_margin),
    ]);
    let ground = cert.min_eig_plus - cert.shift;
    let closed_form = 0.5 * (3.0f64.sqrt() - 2.0);
    let err = (ground - closed_form).abs();
    criteria.push(crit(
        "single_mode_closed_form",
        err,
        "<= 1e-4",
        err <= 1e-4,
    ));

    // 20 random multi-mode instances satisfying the hypothesis
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = 3usize;
    let mut worst = f64::INFINITY;
    for inst in 0..20 {
        let h: Vec<f64> = (0..m).map(|_| rng.gen_range(0.5..3.0)).collect();
        let mut k: Array2<Complex64> = Array2::zeros((m, m));
        for i in 0..m {
            for j in i..m {
                let v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        // scale K to satisfy K H^{-1} K* ≤ H with margin
        let mut m_mat: Array2<Complex64> = Array2::zeros((m, m));
        for i in 0..m {
            for j in 0..m {
                let mut acc = Complex64::new(0.0, 0.0);
                for l in 0..m {
                    acc += k[(i, l)] * k[(j, l)].conj() / h[l];
                }
                m_mat[(i, j)] = acc / (h[i] * h[j]).sqrt();
            }
        }
        let lam = *hermitian_eigenvalues(&m_mat).last().unwrap();
        let scale = (0.9 / lam).sqrt();
        let k = k.mapv(|v| v * scale);
        let cert = certify_pairing_bound(&h, &k, 8)?;
        worst = worst
            .min(cert.min_eig_plus)
            .min(cert.min_eig_minus);
        csv.push(vec![
            inst.to_string(),
            fmt_f64(cert.min_eig_plus),
            fmt_f64(cert.min_eig_minus),
            fmt_f64(cert.shift),
            fmt_f64(cert.precondition_margin),
        ]);
    }
    criteria.push(crit(
        "random_instances_min_eig",
        worst,
        ">= -1e-6",
        worst >= -1e-6,
    ));

    let path = cfg.out.join("pairing.csv");
    csv.write_to(&path)?;
    Ok(ExperimentOutcome {
        criteria,
        outputs: vec![path],
    })
}

// ------------------------------------------------------------- errorbounds

fn run_errorbounds(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let grid = grid_from(cfg)?;
    let u = Field::normalized_constant(grid.clone());
    let modes = ModeBasis::first_pairs(cfg.m_modes)?;
    let basis = FockBasis::new(modes.len(), cfg.p_cut)?;
    let mut csv = CsvTable::new(&[
        "j", "sign", "eta", "m", "n", "beta", "min_eig", "minimal_c", "eta_ok",
    ]);
    // η fixed across the sweep at the largest threshold (the smallest N)
    let n_min = *cfg.n_list.iter().min().unwrap();
    let eta = match cfg.eta_policy.as_str() {
        "auto" => eta_threshold(cfg.m_sector, n_min, cfg.beta),
        v => v.parse::<f64>().unwrap_or(1.0),
    };

    let mut per_j_sign: std::collections::HashMap<(usize, i32), Vec<(f64, f64)>> =
        std::collections::HashMap::new();
    let mut r6_min_eig = f64::INFINITY;
    for &n in &cfg.n_list {
        let vn = potential_from(cfg, n)?;
        let bundle = assemble_generator(&u, &vn, &modes, &basis, n)?;
        let rows = certify_error_bounds(&bundle, cfg.m_sector, eta, cfg.beta)?;
        for row in rows {
            csv.push(vec![
                row.j.to_string(),
                row.sign.to_string(),
                fmt_f64(row.eta),
                row.m_sector.to_string(),
                row.n_phys.to_string(),
                fmt_f64(row.beta),
                fmt_f64(row.min_eig),
                fmt_f64(row.minimal_c),
                (row.eta_ok as u8).to_string(),
            ]);
            per_j_sign
                .entry((row.j, row.sign))
                .or_default()
                .push((n as f64, row.minimal_c));
        }
        // R₆ positivity (paper: 0 ≤ R₆), checked on the full cutoff space
        let sym = bundle.r[6].plus_adjoint().scaled(Complex64::new(0.5, 0.0));
        let eigs = hermitian_eigenvalues(&sym.to_dense());
        r6_min_eig = r6_min_eig.min(eigs[0]);
    }
    let path = cfg.out.join("errorbounds.csv");
    csv.write_to(&path)?;

    let mut criteria = Vec::new();
    let mut worst_slope = f64::NEG_INFINITY;
    let mut all_finite = true;
    for ((_j, _sign), pts) in per_j_sign.iter() {
        all_finite &= pts.iter().all(|p| p.1.is_finite());
        // columns that are numerically zero certify with c = 0; their slope
        // is trivially flat
        let nonzero: Vec<(f64, f64)> = pts.iter().copied().filter(|p| p.1 > 1e-14).collect();
        if nonzero.len() >= 2 {
            if let Some(s) = loglog_slope(&nonzero) {
                worst_slope = worst_slope.max(s);
            }
        }
    }
    if worst_slope == f64::NEG_INFINITY {
        worst_slope = 0.0;
    }
    criteria.push(crit(
        "minimal_c_exists",
        if all_finite { 1.0 } else { 0.0 },
        "finite for all (j, sign, N)",
        all_finite,
    ));
    criteria.push(crit(
        "minimal_c_growth_exponent",
        worst_slope,
        "<= 0.3",
        worst_slope <= 0.3,
    ));
    criteria.push(crit(
        "r6_positive_semidefinite",
        r6_min_eig,
        ">= -1e-10",
        r6_min_eig >= -1e-10,
    ));
    Ok(ExperimentOutcome {
        criteria,
        outputs: vec![path],
    })
}

// --------------------------------------------------------------- truncated

fn run_truncated(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let grid = grid_from(cfg)?;
    let u = Field::normalized_constant(grid.clone());
    let modes = ModeBasis::shell(1)?;
    let basis = FockBasis::new(modes.len(), cfg.p_cut)?;
    let potential = potential_from(cfg, 16)?;
    // quadratic cross-check runs at a desk-scale N; the R-term monitor runs
    // at the configured (large) N where corrections are provably small
    let bundle = assemble_generator(&u, &potential, &modes, &basis, 16)?;

    let mut outputs = Vec::new();
    let mut criteria = Vec::new();

    // quadratic generator, vacuum start: ⟨N⟩ must match tr γ of the (γ, α)
    // system with the same kernels
    let vac = FockVector::vacuum(basis.clone());
    let stride = (0.05 / cfg.dt).round() as usize;
    let (_, fock_mons) = evolve_truncated(
        &bundle.bogoliubov,
        &basis,
        &vac,
        cfg.p_cut,
        cfg.dt,
        cfg.t_final,
        &bundle.number_op,
        &bundle.kinetic_op,
        stride,
    )?;
    let kern = build_kernels(&u, &potential, &modes)?;
    let weights: Vec<f64> = modes
        .modes()
        .iter()
        .map(|k| 1.0 + (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64)
        .collect();
    let (_, dm_mons) = evolve_density_matrices(
        &kern,
        &BogoliubovState::vacuum(modes.len()),
        cfg.dt,
        cfg.t_final,
        &weights,
        stride,
    )?;
    let mut csv = CsvTable::new(&["time", "fock_number", "trace_gamma", "leakage"]);
    let mut worst = 0.0f64;
    let mut worst_leak = 0.0f64;
    for (fm, dm) in fock_mons.iter().zip(&dm_mons) {
        let leak: f64 = fm
            .sector_weights
            .iter()
            .enumerate()
            .filter(|(s, _)| *s + 1 >= cfg.p_cut)
            .map(|(_, w)| w)
            .sum();
        csv.push(vec![
            fmt_f64(fm.time),
            fmt_f64(fm.number),
            fmt_f64(dm.trace_gamma),
            fmt_f64(leak),
        ]);
        worst = worst.max((fm.number - dm.trace_gamma).abs());
        worst_leak = worst_leak.max(leak);
    }
    let path = cfg.out.join("truncated_quadratic.csv");
    csv.write_to(&path)?;
    outputs.push(path);
    criteria.push(crit(
        "quadratic_number_matches_trace_gamma",
        worst,
        "<= 1e-5",
        worst <= 1e-5,
    ));
    criteria.push(crit(
        "truncation_leakage",
        worst_leak,
        "< 1e-6",
        worst_leak < 1e-6,
    ));

    // full vs quadratic generator at large N: difference bounded by the
    // a-priori size of the correction terms along the path
    let bundle_large = assemble_generator(&u, &potential, &modes, &basis, cfg.n_phys)?;
    let (full_final, full_mons) = evolve_truncated(
        &bundle_large.h_tilde,
        &basis,
        &vac,
        cfg.p_cut,
        cfg.dt,
        cfg.t_final,
        &bundle_large.number_op,
        &bundle_large.kinetic_op,
        stride,
    )?;
    let (quad_final, _) = evolve_truncated(
        &bundle_large.bogoliubov,
        &basis,
        &vac,
        cfg.p_cut,
        cfg.dt,
        cfg.t_final,
        &bundle_large.number_op,
        &bundle_large.kinetic_op,
        stride,
    )?;
    let diff: f64 = full_final
        .coeffs
        .iter()
        .zip(&quad_final.coeffs)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    // a-priori size: ∫ ‖½Σ(R_j + R_j†)Φ(t)‖ dt sampled at monitor times,
    // estimated along the full path endpoint state
    let half_corr = {
        let mut acc = bundle_large.r[0].plus_adjoint();
        for rj in &bundle_large.r[1..] {
            acc = acc.add(&rj.plus_adjoint());
        }
        acc.scaled(Complex64::new(0.5, 0.0))
    };
    let r_size_end = {
        let rv = half_corr.apply(&full_final.coeffs);
        rv.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    };
    let a_priori = r_size_end * cfg.t_final;
    let bound = 10.0 * a_priori.max(1e-14);
    criteria.push(crit(
        "full_vs_quadratic_consistency",
        diff,
        &format!("<= {bound:.3e} (10x a-priori R size)"),
        diff <= bound,
    ));
    let _ = full_mons;

    Ok(ExperimentOutcome { criteria, outputs })
}

// ----------------------------------------------------------------- fewbody

fn run_fewbody(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let lattice = Lattice::new(cfg.sites_per_dim)?;
    let s = lattice.site_count();
    let basis = FewBodyBasis::new(s, 3)?;
    let potential = potential_from(cfg, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut outputs = Vec::new();
    let mut criteria = Vec::new();

    // condensate direction for the structural identities
    let mut u: Vec<Complex64> = (0..s)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let nrm = qmfd_core::linalg::norm(&u);
    qmfd_core::linalg::scale_in_place(&mut u, Complex64::new(1.0 / nrm, 0.0));

    let mut csv = CsvTable::new(&["state", "isometry_error", "gamma_identity_error"]);
    let mut worst_iso = 0.0f64;
    let mut worst_gamma = 0.0f64;
    let mut q = Array2::<Complex64>::eye(s);
    for i in 0..s {
        for j in 0..s {
            q[(i, j)] -= u[i] * u[j].conj();
        }
    }
    for state_idx in 0..50 {
        let coeffs: Vec<Complex64> = (0..basis.dim())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let mut psi = FewBodyState {
            basis: basis.clone(),
            coeffs,
        };
        psi.normalize();
        let phi = un_transform(&psi, &u)?;
        let iso = (phi.norm_sqr() - 1.0).abs();
        let gamma_psi = reduced_density(&psi).matrix;
        let gamma_phi = phi.one_body_density();
        let lhs = q.dot(&gamma_psi).dot(&q);
        let gerr = qmfd_core::linalg::frobenius_distance(&lhs, &gamma_phi);
        worst_iso = worst_iso.max(iso);
        worst_gamma = worst_gamma.max(gerr);
        csv.push(vec![state_idx.to_string(), fmt_f64(iso), fmt_f64(gerr)]);
    }
    let path = cfg.out.join("fewbody_identities.csv");
    csv.write_to(&path)?;
    outputs.push(path);
    criteria.push(crit(
        "un_isometry",
        worst_iso,
        "<= 1e-12",
        worst_iso <= 1e-12,
    ));
    criteria.push(crit(
        "gamma_identity",
        worst_gamma,
        "<= 1e-10",
        worst_gamma <= 1e-10,
    ));

    // transformed-generator residual with the exact propagator as oracle,
    // including the χ phase and its perturbation probe
    let u0: Vec<Complex64> = vec![Complex64::new(1.0 / (s as f64).sqrt(), 0.0); s];
    let mut psi0 = FewBodyState::product(basis.clone(), &u0);
    for c in psi0.coeffs.iter_mut() {
        *c += Complex64::new(rng.gen_range(-0.06..0.06), rng.gen_range(-0.06..0.06));
    }
    psi0.normalize();
    let report = generator_equivalence_check(
        &lattice,
        &potential,
        &u0,
        &psi0,
        cfg.dt,
        cfg.t_final,
        5,
    )?;
    let mut res_csv = CsvTable::new(&["time", "residual"]);
    for (t, r) in &report.residuals {
        res_csv.push(vec![fmt_f64(*t), fmt_f64(*r)]);
    }
    let path = cfg.out.join("fewbody_residuals.csv");
    res_csv.write_to(&path)?;
    outputs.push(path);
    criteria.push(crit(
        "generator_equivalence_residual",
        report.max_residual,
        "<= 1e-5",
        report.max_residual <= 1e-5,
    ));
    let kick = report.perturbed_max_residual;
    let expected = 0.01 * report.chi_scale;
    let detected = kick > 5.0 * report.max_residual.max(1e-12) && kick > 0.3 * expected;
    criteria.push(crit(
        "chi_probe_detects_1pct",
        kick,
        &format!("> 5x base and ~{expected:.3e}"),
        detected,
    ));

    Ok(ExperimentOutcome { criteria, outputs })
}

// ----------------------------------------------------------------- sobolev

fn run_sobolev(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let potential = potential_from(cfg, cfg.n_phys)?;
    let g_coarse = TorusGrid::new(cfg.grid_n)?;
    let g_fine = TorusGrid::new(cfg.grid_n * 2)?;
    let r_coarse = potential.sobolev_ratio_diagnostic(&g_coarse)?;
    let r_fine = potential.sobolev_ratio_diagnostic(&g_fine)?;

    let mut csv = CsvTable::new(&["grid_n", "n", "ratio", "resolved"]);
    csv.push(vec![
        cfg.grid_n.to_string(),
        cfg.n_phys.to_string(),
        fmt_f64(r_coarse),
        "1".into(),
    ]);
    csv.push(vec![
        (cfg.grid_n * 2).to_string(),
        cfg.n_phys.to_string(),
        fmt_f64(r_fine),
        "1".into(),
    ]);

    // β sweep through the rescaling parameter: ratio stays bounded while
    // the potential core is resolved
    let mut sweep = Vec::new();
    for &n in &cfg.n_list {
        let vn = potential.with_n(n);
        let resolved = vn.resolves_on(&g_coarse);
        let r = vn.sobolev_ratio_diagnostic(&g_coarse)?;
        csv.push(vec![
            cfg.grid_n.to_string(),
            n.to_string(),
            fmt_f64(r),
            (resolved as u8).to_string(),
        ]);
        if resolved {
            sweep.push(r);
        }
    }
    let path = cfg.out.join("sobolev.csv");
    csv.write_to(&path)?;

    let rel = (r_coarse - r_fine).abs() / r_fine.abs().max(1e-300);
    let mut criteria = vec![crit(
        "resolution_stability",
        rel,
        "<= 0.2",
        rel <= 0.2,
    )];
    // bounded across the sweep: every value within a factor 2 of the median
    let bounded = if sweep.is_empty() {
        false
    } else {
        let mut sorted = sweep.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = sorted[sorted.len() / 2];
        sweep.iter().all(|&r| r >= med / 2.0 && r <= med * 2.0)
    };
    let spread = if sweep.is_empty() {
        f64::NAN
    } else {
        sweep.iter().cloned().fold(f64::MIN, f64::max)
            / sweep.iter().cloned().fold(f64::MAX, f64::min)
    };
    criteria.push(crit(
        "sweep_bounded",
        spread,
        "max/min within factor-2 window of median",
        bounded,
    ));
    Ok(ExperimentOutcome {
        criteria,
        outputs: vec![path],
    })
}
