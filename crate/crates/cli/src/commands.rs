//! `run`, `check`, `verify` and `sweep`.

use std::path::{Path, PathBuf};

use gtot_core::correlators::{
    g2_grouped_from_moments, g2_grouped_series, g_tot_from_moments, g_tot_series, j_key, pair_key,
    CONSERVATION_THRESHOLD, N_TOTAL_KEY,
};
use gtot_core::dynamics::{occupation_key, LEAKAGE_KEY};
use gtot_core::positivep::NOISE_FACTORIZATION;
use gtot_core::{
    build_correlator_set, check_u1_symmetry, conservation_report, derivative_crosscheck, initial_state, integrate,
    pp_run, Identity, IntegrateOptions, Observable, PpOptions, SymmetryReport, Trajectory, DISSIPATOR_CONVENTION,
};
use rayon::prelude::*;
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::output::{meta_path, stderr_path, write_atomic, Table};
use crate::scenario::{build_scenario, render, set_parameter, Engine, Scenario, ScenarioFile};

/// Residual below which `verify` passes.
pub const VERIFY_THRESHOLD: f64 = 1e-3;

/// Per-order conservation summary of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Conservation {
    pub m: usize,
    pub max_abs_dev: f64,
    pub max_rel_dev: f64,
    pub conserved: bool,
    pub floor_breach: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub table: Table,
    /// Standard errors of the positive-P estimators.
    pub stderr: Option<Table>,
    pub meta: serde_json::Value,
    pub conservation: Vec<Conservation>,
}

/// Column names in output order.
pub fn csv_header(labels: &[String], orders: &[usize]) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(labels.iter().map(|l| occupation_key(l)));
    for i in 0..labels.len() {
        for j in i..labels.len() {
            h.push(format!("G2_{}_{}", labels[i], labels[j]));
        }
    }
    h.push(N_TOTAL_KEY.to_string());
    h.extend(orders.iter().map(|&m| j_key(m)));
    h.extend(orders.iter().map(|&m| format!("g_tot_{m}")));
    h.push(LEAKAGE_KEY.to_string());
    h
}

fn sample_times(times: &[f64]) -> Vec<f64> {
    let stride = times.len().div_ceil(50).max(1);
    times.iter().step_by(stride).copied().collect()
}

fn symmetry_json(r: &SymmetryReport) -> serde_json::Value {
    json!({
        "commutator_norm": r.commutator_norm,
        "is_u1_symmetric": r.is_u1_symmetric,
        "linear_dissipation": r.linear_dissipation,
        "uniform_rates": r.uniform_rates,
        "gain_free": r.gain_free,
        "predicted_conserved": r.predicted_conserved,
    })
}

fn base_meta(scenario: &Scenario) -> serde_json::Value {
    let report = check_u1_symmetry(&scenario.spec, 1e-10, &sample_times(&scenario.times));
    json!({
        "scenario_name": scenario.name(),
        "scenario": render(&scenario.file),
        "dissipator_convention": DISSIPATOR_CONVENTION,
        "versions": { "gtot-cli": env!("CARGO_PKG_VERSION"), "gtot-core": gtot_core::VERSION },
        "units": "rates in the scenario are multiples of gamma; t column in absolute units",
        "hilbert_dim": scenario.spec.space().dim(),
        "symmetry": symmetry_json(&report),
    })
}

/// Integrates the scenario with the exact engine, recording `extra` as well.
pub fn run_exact_trajectory(scenario: &Scenario, tol: f64, max_leakage: Option<f64>, extra: &[Observable]) -> CliResult<Trajectory> {
    let space = scenario.spec.space();
    let rho0 = initial_state(space, &scenario.initial).map_err(CliError::engine("building the initial state"))?;
    let mut observables = Vec::new();
    for &m in &scenario.orders {
        let cs = build_correlator_set(space, m).map_err(CliError::engine("building correlators"))?;
        observables.extend(cs.observables());
    }
    observables.extend_from_slice(extra);
    let options = IntegrateOptions { tol, leakage_bound: max_leakage, ..IntegrateOptions::default() };
    integrate(&scenario.spec, &rho0, &scenario.times, &options, &observables)
        .map_err(CliError::engine(format!("integrating `{}`", scenario.name())))
}

fn run_exact(scenario: &Scenario, tol: f64, max_leakage: Option<f64>) -> CliResult<RunOutput> {
    let traj = run_exact_trajectory(scenario, tol, max_leakage, &[])?;
    let labels = scenario.labels();
    let series = |name: &str| traj.series(name).map(|s| s.iter().map(|&v| Some(v)).collect::<Vec<_>>());
    let missing = CliError::engine("reading the trajectory");
    let mut columns: Vec<Vec<Option<f64>>> = vec![traj.times.iter().map(|&t| Some(t)).collect()];
    let mut build = || -> gtot_core::Result<()> {
        for l in &labels {
            columns.push(series(&occupation_key(l))?);
        }
        for i in 0..labels.len() {
            for j in i..labels.len() {
                columns.push(g2_grouped_series(&traj, &labels[i], &labels[j])?);
            }
        }
        columns.push(series(N_TOTAL_KEY)?);
        for &m in &scenario.orders {
            columns.push(series(&j_key(m))?);
        }
        for &m in &scenario.orders {
            columns.push(g_tot_series(&traj, m)?);
        }
        columns.push(series(LEAKAGE_KEY)?);
        Ok(())
    };
    build().map_err(missing)?;

    let mut conservation = Vec::new();
    for &m in &scenario.orders {
        let cs = build_correlator_set(scenario.spec.space(), m).map_err(CliError::engine("building correlators"))?;
        let r = conservation_report(&traj, &cs, CONSERVATION_THRESHOLD).map_err(CliError::engine("conservation"))?;
        conservation.push(Conservation {
            m,
            max_abs_dev: r.max_abs_dev,
            max_rel_dev: r.max_rel_dev,
            conserved: r.conserved,
            floor_breach: r.floor_breach,
        });
    }

    let mut meta = base_meta(scenario);
    meta["engine"] = json!({ "kind": "exact", "tol": tol, "max_leakage": max_leakage });
    meta["leakage_max"] = json!(traj.leakage_max);
    meta["trace_drift_max"] = json!(traj.trace_drift_max);
    meta["hermiticity_max"] = json!(traj.hermiticity_max);
    meta["min_sampled_eigenvalue"] = json!(traj.min_eigenvalue);
    meta["integrator"] = json!({
        "method": "Dormand-Prince 5(4)",
        "accepted": traj.stats.accepted,
        "rejected": traj.stats.rejected,
        "rhs_evals": traj.stats.rhs_evals,
    });
    meta["conservation"] = conservation_json(&conservation);
    Ok(RunOutput { table: transpose(csv_header(&labels, &scenario.orders), columns), stderr: None, meta, conservation })
}

fn conservation_json(c: &[Conservation]) -> serde_json::Value {
    c.iter()
        .map(|c| {
            json!({
                "m": c.m,
                "max_abs_dev": finite_or_null(c.max_abs_dev),
                "max_rel_dev": finite_or_null(c.max_rel_dev),
                "conserved": c.conserved,
                "floor_breach": c.floor_breach,
            })
        })
        .collect()
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

fn transpose(header: Vec<String>, columns: Vec<Vec<Option<f64>>>) -> Table {
    let n = columns.first().map_or(0, Vec::len);
    let rows = (0..n).map(|k| columns.iter().map(|c| c[k]).collect()).collect();
    Table { header, rows }
}

fn run_positive_p(scenario: &Scenario, n_traj: usize, seed: u64, dt: f64, escape_radius: f64) -> CliResult<RunOutput> {
    let init = scenario.coherent_amplitudes()?;
    let opts = PpOptions { n_traj, seed, dt, escape_radius, orders: scenario.orders.clone() };
    let ens = pp_run(&scenario.spec, &init, &scenario.times, &opts).map_err(CliError::engine("positive-P sampling"))?;
    let labels = scenario.labels();
    let est = |name: &str| ens.estimate(name).map_err(CliError::engine("reading estimates"));
    let some = |v: &[f64]| v.iter().map(|&x| Some(x)).collect::<Vec<_>>();

    let mut columns = vec![some(&ens.times)];
    let mut errors = vec![some(&ens.times)];
    let mut err_header = vec!["t".to_string()];
    for l in &labels {
        let e = est(&occupation_key(l))?;
        columns.push(some(&e.mean));
        errors.push(some(&e.se));
        err_header.push(format!("se_{}", occupation_key(l)));
    }
    for i in 0..labels.len() {
        for j in i..labels.len() {
            let p = est(&pair_key(&labels[i], &labels[j]))?;
            let ni = &est(&occupation_key(&labels[i]))?.mean;
            let nj = &est(&occupation_key(&labels[j]))?.mean;
            columns.push((0..p.mean.len()).map(|k| g2_grouped_from_moments(p.mean[k], ni[k], nj[k])).collect());
            errors.push(some(&p.se));
            err_header.push(format!("se_{}", pair_key(&labels[i], &labels[j])));
        }
    }
    let n = est(N_TOTAL_KEY)?;
    columns.push(some(&n.mean));
    errors.push(some(&n.se));
    err_header.push(format!("se_{N_TOTAL_KEY}"));
    for &m in &scenario.orders {
        let e = est(&j_key(m))?;
        columns.push(some(&e.mean));
        errors.push(some(&e.se));
        err_header.push(format!("se_{}", j_key(m)));
    }
    let mut conservation = Vec::new();
    for &m in &scenario.orders {
        let j = &est(&j_key(m))?.mean;
        let g: Vec<Option<f64>> = (0..j.len()).map(|k| g_tot_from_moments(j[k], n.mean[k], m)).collect();
        let e = est(&format!("g_tot_{m}"))?;
        errors.push(g.iter().zip(&e.se).map(|(g, &s)| g.map(|_| s)).collect());
        err_header.push(format!("se_g_tot_{m}"));
        let defined: Vec<f64> = g.iter().map_while(|v| *v).collect();
        let g0 = defined.first().copied().unwrap_or(f64::NAN);
        let abs = defined.iter().map(|v| (v - g0).abs()).fold(0.0, f64::max);
        // a sampled series counts as conserved when every deviation is within 3 SE
        let within = defined.iter().zip(&e.se).all(|(v, s)| (v - g0).abs() <= 3.0 * s);
        conservation.push(Conservation {
            m,
            max_abs_dev: abs,
            max_rel_dev: if g0 != 0.0 { abs / g0.abs() } else { abs },
            conserved: !defined.is_empty() && within,
            floor_breach: g.iter().position(Option::is_none).map(|k| ens.times[k]),
        });
        columns.push(g);
    }
    // the phase-space engine is untruncated
    columns.push(vec![Some(0.0); ens.times.len()]);

    let worst_imag = ens
        .estimates
        .iter()
        .filter(|(k, _)| !k.starts_with("g_tot"))
        .flat_map(|(_, e)| e.imag.iter().zip(&e.se).map(|(i, s)| if *s > 0.0 { i.abs() / s } else { 0.0 }))
        .fold(0.0, f64::max);
    let mut meta = base_meta(scenario);
    meta["engine"] = json!({
        "kind": "positive_p",
        "n_traj": n_traj,
        "seed": seed,
        "dt": dt,
        "dt_used": ens.dt_used,
        "escape_radius": escape_radius,
        "noise_factorization": NOISE_FACTORIZATION,
    });
    meta["excluded_trajectories"] = json!(ens.excluded);
    meta["unreliable"] = json!(ens.unreliable);
    meta["max_imaginary_over_se"] = json!(worst_imag);
    meta["leakage_max"] = json!(0.0);
    meta["conservation"] = conservation_json(&conservation);
    Ok(RunOutput {
        table: transpose(csv_header(&labels, &scenario.orders), columns),
        stderr: Some(transpose(err_header, errors)),
        meta,
        conservation,
    })
}

/// Executes the scenario's engine without writing anything.
pub fn execute(scenario: &Scenario) -> CliResult<RunOutput> {
    match scenario.engine {
        Engine::Exact { tol, max_leakage } => run_exact(scenario, tol, max_leakage),
        Engine::PositiveP { n_traj, seed, dt, escape_radius } => run_positive_p(scenario, n_traj, seed, dt, escape_radius),
    }
}

pub fn write_run(out: &Path, run: &RunOutput) -> CliResult<()> {
    write_atomic(out, run.table.to_csv().as_bytes())?;
    if let Some(se) = &run.stderr {
        write_atomic(&stderr_path(out), se.to_csv().as_bytes())?;
    }
    let meta = serde_json::to_string_pretty(&run.meta).expect("metadata is valid JSON");
    write_atomic(&meta_path(out), meta.as_bytes())
}

pub fn cmd_run(scenario: &Scenario, out: &Path) -> CliResult<RunOutput> {
    let run = execute(scenario)?;
    write_run(out, &run)?;
    Ok(run)
}

pub fn cmd_check(scenario: &Scenario, tol: f64) -> (SymmetryReport, String) {
    let r = check_u1_symmetry(&scenario.spec, tol, &sample_times(&scenario.times));
    let text = format!(
        "scenario: {}\ncommutator_norm: {:e}\nis_u1_symmetric: {}\nlinear_dissipation: {}\nuniform_rates: {}\ngain_free: {}\npredicted_conserved: {}\n",
        scenario.name(),
        r.commutator_norm,
        r.is_u1_symmetric,
        r.linear_dissipation,
        r.uniform_rates,
        r.gain_free,
        r.predicted_conserved
    );
    (r, text)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub identity: Identity,
    pub residual: f64,
    pub passed: bool,
}

pub fn cmd_verify(scenario: &Scenario, identity: Identity) -> CliResult<VerifyReport> {
    let aux = identity
        .auxiliary_observables(&scenario.spec)
        .map_err(CliError::engine(format!("identity {identity} on `{}`", scenario.name())))?;
    let tol = match scenario.engine {
        Engine::Exact { tol, .. } => tol,
        Engine::PositiveP { .. } => 1e-9,
    };
    let traj = run_exact_trajectory(scenario, tol, None, &aux)?;
    let residual = derivative_crosscheck(&traj, &scenario.spec, identity).map_err(CliError::engine("cross-check"))?;
    Ok(VerifyReport { identity, residual, passed: residual < VERIFY_THRESHOLD })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    /// Largest relative `g_tot` deviation over the requested orders.
    pub deviation: Option<f64>,
    pub final_n: f64,
    pub output: PathBuf,
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

/// Runs one scenario per value of the parameter at `param`, writing each run
/// and a `summary.csv` into `out_dir`.
pub fn cmd_sweep(base: &ScenarioFile, param: &str, values: &[f64], out_dir: &Path) -> CliResult<Vec<SweepRow>> {
    let scenarios: Vec<Scenario> = values
        .iter()
        .map(|&v| build_scenario(set_parameter(base, param, v)?))
        .collect::<CliResult<_>>()?;
    let rows: Vec<CliResult<SweepRow>> = scenarios
        .par_iter()
        .zip(values.par_iter())
        .enumerate()
        .map(|(k, (scenario, &value))| {
            let out = out_dir.join(format!("{}_{}_{k:03}.csv", sanitize(&base.name), sanitize(param)));
            let run = cmd_run(scenario, &out)?;
            let deviation = run
                .conservation
                .iter()
                .map(|c| c.max_rel_dev)
                .try_fold(0.0f64, |acc, d| d.is_finite().then(|| acc.max(d)));
            let final_n = run
                .table
                .column(N_TOTAL_KEY)
                .and_then(|c| c.last().copied().flatten())
                .unwrap_or(f64::NAN);
            Ok(SweepRow { value, deviation, final_n, output: out })
        })
        .collect();
    let rows: Vec<SweepRow> = rows.into_iter().collect::<CliResult<_>>()?;

    let mut summary = Table::new(vec!["value".into(), "g_tot_deviation".into(), "final_N".into()]);
    summary.rows = rows.iter().map(|r| vec![Some(r.value), r.deviation, Some(r.final_n)]).collect();
    write_atomic(&out_dir.join("summary.csv"), summary.to_csv().as_bytes())?;
    Ok(rows)
}
