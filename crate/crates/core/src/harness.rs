//! Seeded Monte Carlo sweeps over the number of measurements.
//!
//! A sweep is described by an [`ExperimentConfig`] (read from JSON). Each
//! `(trial, m)` cell draws its own ensemble and matrices from a seed derived
//! from `(base_seed, trial, m)`, so cells are independent work units and the
//! result table does not depend on execution order or thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{ensemble_mse, mean_relative_error, rate_accounting, RateBudget, RateReport};
use crate::error::{DcsError, Result};
use crate::model::{
    gen_ensemble, EnsembleParams, JsmModel, NormPolicy, SignalEnsemble, SupportPolicy,
};
use crate::recovery::{
    default_inner_eps, recover_doi, recover_separate, recover_tecc, recover_texas_doi,
    recover_texas_holdem, EnsembleRecovery, SideInformation,
};
use crate::rng;
use crate::sensing::{
    estimate_rip, gen_matrix, CodesFile, MeasurementSet, Quantizer, SensingMatrix,
};
use crate::solver::{BpdnSolver, SolverConfig};

/// Environment variable that replaces `base_seed` when set.
pub const SEED_ENV: &str = "DCS_LAB_SEED";

pub const CSV_HEADER: &str =
    "algorithm,m,J,R,trial,mse,mean_relative_error,converged_fraction,wall_time";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Separate,
    Doi,
    TexasDoi,
    TexasHoldem,
    Tecc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Separate,
        Algorithm::Doi,
        Algorithm::TexasDoi,
        Algorithm::TexasHoldem,
        Algorithm::Tecc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Separate => "separate",
            Algorithm::Doi => "doi",
            Algorithm::TexasDoi => "texas_doi",
            Algorithm::TexasHoldem => "texas_holdem",
            Algorithm::Tecc => "tecc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Jsm1,
    Jsm3,
}

/// Side-information acquisition budget: `m1` measurements at `R1` bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiBudget {
    pub m1: u64,
    #[serde(rename = "R1")]
    pub r1: u32,
}

fn default_rip_samples() -> usize {
    1_000
}

fn default_output_path() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub n: usize,
    #[serde(rename = "J")]
    pub nodes: usize,
    #[serde(rename = "k_C", default, skip_serializing_if = "Option::is_none")]
    pub k_c: Option<usize>,
    #[serde(rename = "k_I")]
    pub k_i: usize,
    pub m_values: Vec<usize>,
    /// Bits per measurement; 0 disables quantization.
    #[serde(rename = "R")]
    pub bits: u32,
    pub trials: usize,
    pub base_seed: u64,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub support_policy: SupportPolicy,
    #[serde(default)]
    pub norm_policy: NormPolicy,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub si_budget: Option<SiBudget>,
    #[serde(default = "default_output_path")]
    pub output_path: PathBuf,
    /// Innovation-norm estimate used by the default inner radius. Defaults
    /// to `eta` under equal-norm innovations and `sqrt(k_I)` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_hat: Option<f64>,
    /// Replaces every automatically chosen BPDN radius.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_override: Option<f64>,
    /// Samples behind the RIP estimate that enters the default radius.
    #[serde(default = "default_rip_samples")]
    pub rip_samples: usize,
    /// Include the side-information node in the reported MSE.
    #[serde(default)]
    pub mse_include_si: bool,
    /// Write each cell's quantized measurements as a codes file.
    #[serde(default)]
    pub dump_measurements: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Applies `DCS_LAB_SEED` if it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.base_seed = raw
                .trim()
                .parse()
                .map_err(|_| DcsError::InvalidConfig(format!("{SEED_ENV}={raw:?} is not a u64")))?;
        }
        Ok(())
    }

    pub fn jsm_model(&self) -> Result<JsmModel> {
        match (self.model, self.k_c) {
            (ModelKind::Jsm1, Some(k)) => Ok(JsmModel::Jsm1 { common_sparsity: k }),
            (ModelKind::Jsm1, None) => Err(DcsError::InvalidConfig("jsm1 requires k_C".into())),
            (ModelKind::Jsm3, None) => Ok(JsmModel::Jsm3),
            (ModelKind::Jsm3, Some(_)) => Err(DcsError::InvalidConfig(
                "k_C is meaningless under jsm3".into(),
            )),
        }
    }

    pub fn ensemble_params(&self, seed: u64) -> Result<EnsembleParams> {
        Ok(EnsembleParams {
            n: self.n,
            nodes: self.nodes,
            model: self.jsm_model()?,
            innovation_sparsity: self.k_i,
            support_policy: self.support_policy,
            norm_policy: self.norm_policy,
            seed,
        })
    }

    pub fn eta_estimate(&self) -> f64 {
        self.eta_hat.unwrap_or(match self.norm_policy {
            NormPolicy::EqualNorm { eta } => eta,
            NormPolicy::GaussianAmplitudes => (self.k_i as f64).sqrt(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DcsError::InvalidConfig(msg));
        self.ensemble_params(0)
            .and_then(|p| p.validate())
            .map_err(|e| DcsError::InvalidConfig(e.to_string()))?;
        if self.m_values.is_empty() {
            return bad("m_values is empty".into());
        }
        if let Some(m) = self.m_values.iter().find(|&&m| m == 0 || m > self.n) {
            return bad(format!("m={m} outside 1..={}", self.n));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms selected".into());
        }
        if self.bits > 32 {
            return bad(format!("R={} exceeds 32 bits", self.bits));
        }
        if self.algorithms.contains(&Algorithm::Tecc) && self.model != ModelKind::Jsm3 {
            return bad("tecc needs the jsm3 model".into());
        }
        if let Some(b) = self.si_budget {
            if b.m1 == 0 || !(1..=32).contains(&b.r1) {
                return bad(format!("invalid side-information budget {b:?}"));
            }
        }
        if let Some(eps) = self.eps_override {
            if !(eps >= 0.0 && eps.is_finite()) {
                return bad(format!("eps_override must be >= 0, got {eps}"));
            }
        }
        if let Some(eta) = self.eta_hat {
            if !(eta >= 0.0 && eta.is_finite()) {
                return bad(format!("eta_hat must be >= 0, got {eta}"));
            }
        }
        if self.rip_samples == 0 {
            return bad("rip_samples must be at least 1".into());
        }
        self.solver.validate()
    }

    /// Rate accounting for every swept `m`, when a side-information budget
    /// and a positive rate are configured.
    pub fn rate_reports(&self) -> Result<Vec<(usize, RateReport)>> {
        let Some(b) = self.si_budget.filter(|_| self.bits > 0) else {
            return Ok(Vec::new());
        };
        self.m_values
            .iter()
            .map(|&m| {
                let report = rate_accounting(&RateBudget {
                    nodes: self.nodes as u64,
                    m: m as u64,
                    bits: u64::from(self.bits),
                    m1: b.m1,
                    bits1: u64::from(b.r1),
                })?;
                Ok((m, report))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub algorithm: Algorithm,
    pub m: usize,
    #[serde(rename = "J")]
    pub nodes: usize,
    #[serde(rename = "R")]
    pub bits: u32,
    pub trial: usize,
    pub mse: f64,
    pub mean_relative_error: f64,
    pub converged_fraction: f64,
    pub wall_time: f64,
}

/// Seed of cell `(trial, m)`.
pub fn cell_seed(base_seed: u64, trial: usize, m: usize) -> u64 {
    base_seed ^ rng::derive(trial as u64, &[m as u64])
}

const ENSEMBLE_STREAM: u64 = 1;
const MATRIX_STREAM: u64 = 2;
const NODE_MATRIX_STREAM: u64 = 3;
const RIP_STREAM: u64 = 4;

/// Everything the algorithms of one cell consume.
pub struct CellInputs {
    pub ensemble: SignalEnsemble,
    pub solver: BpdnSolver,
    pub measurements: MeasurementSet,
    pub codes: Option<CodesFile>,
    pub side_info: SideInformation,
    /// Per-node matrices and measurements for TECC.
    pub node_matrices: Option<(Vec<SensingMatrix>, MeasurementSet)>,
    /// Quantization noise bound of one measurement vector.
    pub quant_bound: f64,
    /// RIP estimate behind the default inner radius.
    pub delta_hat: f64,
}

fn quantize_set(
    raw: Vec<DVector<f64>>,
    bits: u32,
) -> Result<(MeasurementSet, Option<Vec<Vec<u32>>>)> {
    if bits == 0 {
        return Ok((MeasurementSet::unquantized(raw)?, None));
    }
    let q = Quantizer::fit(bits, &raw)?;
    let (set, codes) = MeasurementSet::quantized(&raw, q)?;
    Ok((set, Some(codes)))
}

pub fn prepare_cell(cfg: &ExperimentConfig, trial: usize, m: usize) -> Result<CellInputs> {
    let seed = cell_seed(cfg.base_seed, trial, m);
    let ensemble = gen_ensemble(&cfg.ensemble_params(rng::derive(seed, &[ENSEMBLE_STREAM]))?)?;
    let signals = ensemble.node_signals();

    let a = gen_matrix(m, cfg.n, rng::derive(seed, &[MATRIX_STREAM]))?;
    let raw: Vec<DVector<f64>> = signals.iter().map(|x| &a.entries * x).collect();
    let (measurements, codes) = quantize_set(raw.clone(), cfg.bits)?;
    let quant_bound = measurements.quantizer.map_or(0.0, |q| q.noise_bound(m));

    // Node 0's measurements at the side-information rate, on the shared scale.
    let si_y = match (measurements.quantizer, cfg.si_budget) {
        (Some(q), Some(b)) if b.r1 != q.bits() => Quantizer::new(b.r1, q.scale())?.apply(&raw[0]),
        _ => measurements.y[0].clone(),
    };
    let side_info = SideInformation {
        theta_1: signals[0].clone(),
        y_1: si_y,
    };

    let node_matrices = if cfg.algorithms.contains(&Algorithm::Tecc) {
        let mats = (0..cfg.nodes)
            .map(|j| gen_matrix(m, cfg.n, rng::derive(seed, &[NODE_MATRIX_STREAM, j as u64])))
            .collect::<Result<Vec<_>>>()?;
        let raw: Vec<DVector<f64>> = mats
            .iter()
            .zip(&signals)
            .map(|(a, x)| &a.entries * x)
            .collect();
        Some((mats, quantize_set(raw, cfg.bits)?.0))
    } else {
        None
    };

    let needs_delta = cfg.eps_override.is_none()
        && cfg.algorithms.iter().any(|a| {
            matches!(
                a,
                Algorithm::TexasDoi | Algorithm::TexasHoldem | Algorithm::Tecc
            )
        });
    // order of the summed innovations that the averaging residual lives on
    let order = (cfg.nodes * cfg.k_i).min(cfg.n);
    let delta_hat = if needs_delta && order > 0 {
        estimate_rip(&a, order, cfg.rip_samples, rng::derive(seed, &[RIP_STREAM]))?
    } else {
        0.0
    };

    let codes = codes.map(|codes| CodesFile {
        m,
        quantizer: measurements.quantizer.expect("codes imply a quantizer"),
        codes,
    });

    Ok(CellInputs {
        solver: BpdnSolver::new(&a.entries)?,
        ensemble,
        measurements,
        codes,
        side_info,
        node_matrices,
        quant_bound,
        delta_hat,
    })
}

impl CellInputs {
    /// BPDN radius used by `alg`.
    pub fn eps_for(&self, cfg: &ExperimentConfig, alg: Algorithm) -> f64 {
        if let Some(eps) = cfg.eps_override {
            return eps;
        }
        match alg {
            Algorithm::Separate | Algorithm::Doi => self.quant_bound,
            Algorithm::TexasDoi | Algorithm::TexasHoldem | Algorithm::Tecc => default_inner_eps(
                self.delta_hat,
                cfg.eta_estimate(),
                cfg.nodes,
                self.quant_bound,
            ),
        }
    }

    pub fn run(&self, cfg: &ExperimentConfig, alg: Algorithm) -> Result<EnsembleRecovery> {
        let eps = self.eps_for(cfg, alg);
        let s = &cfg.solver;
        match alg {
            Algorithm::Separate => recover_separate(&self.solver, &self.measurements, eps, s),
            Algorithm::Doi => {
                recover_doi(&self.solver, &self.measurements, &self.side_info, eps, s)
            }
            Algorithm::TexasDoi => {
                recover_texas_doi(&self.solver, &self.measurements, &self.side_info, eps, s)
            }
            Algorithm::TexasHoldem => {
                recover_texas_holdem(&self.solver, &self.measurements, eps, s)
            }
            Algorithm::Tecc => {
                let (mats, set) = self.node_matrices.as_ref().ok_or_else(|| {
                    DcsError::InvalidConfig("tecc inputs were not prepared".into())
                })?;
                recover_tecc(mats, set, eps, s)
            }
        }
    }
}

fn mse_of(cfg: &ExperimentConfig, rec: &EnsembleRecovery, truth: &SignalEnsemble) -> Result<f64> {
    if !cfg.mse_include_si {
        return ensemble_mse(rec, truth);
    }
    let errors = crate::analysis::node_errors(rec, truth)?;
    Ok(errors.iter().map(|e| e * e).sum::<f64>() / (errors.len() * truth.len()) as f64)
}

fn run_cell(
    cfg: &ExperimentConfig,
    trial: usize,
    m: usize,
    dump: Option<&Path>,
) -> Result<Vec<ResultRow>> {
    let inputs = prepare_cell(cfg, trial, m)?;
    if let (Some(dir), Some(codes)) = (dump, &inputs.codes) {
        let file = fs::File::create(dir.join(format!("trial{trial}_m{m}.bin")))?;
        codes.write_to(std::io::BufWriter::new(file))?;
    }
    let mut algorithms = cfg.algorithms.clone();
    algorithms.sort();
    algorithms.dedup();
    algorithms
        .into_iter()
        .map(|alg| {
            let start = Instant::now();
            let rec = inputs.run(cfg, alg)?;
            let wall_time = start.elapsed().as_secs_f64();
            Ok(ResultRow {
                algorithm: alg,
                m,
                nodes: cfg.nodes,
                bits: cfg.bits,
                trial,
                mse: mse_of(cfg, &rec, &inputs.ensemble)?,
                mean_relative_error: mean_relative_error(&rec, &inputs.ensemble)?,
                converged_fraction: rec.converged_fraction(),
                wall_time,
            })
        })
        .collect()
}

/// Sorts rows into the canonical order: algorithm name, then `m`, then trial.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        (a.algorithm.name(), a.m, a.trial).cmp(&(b.algorithm.name(), b.m, b.trial))
    });
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    run_experiment_dumping(cfg, None)
}

/// Like [`run_experiment`], additionally writing each quantized cell's codes
/// file into `dump_dir`.
pub fn run_experiment_dumping(
    cfg: &ExperimentConfig,
    dump_dir: Option<&Path>,
) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> = (0..cfg.trials)
        .flat_map(|t| cfg.m_values.iter().map(move |&m| (t, m)))
        .collect();
    let mut rows: Vec<ResultRow> = cells
        .into_par_iter()
        .map(|(t, m)| run_cell(cfg, t, m, dump_dir))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    sort_rows(&mut rows);
    Ok(rows)
}

/// Writes the rows as CSV. With `deterministic` the `wall_time` column is
/// zeroed so repeated runs can be diffed byte for byte.
pub fn export_csv(rows: &[ResultRow], path: &Path, deterministic: bool) -> Result<()> {
    if rows.is_empty() {
        return Err(DcsError::EmptyInput("result rows"));
    }
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        if deterministic {
            w.serialize(ResultRow {
                wall_time: 0.0,
                ..row.clone()
            })?;
        } else {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(DcsError::from))
        .collect()
}

/// Mean MSE per `(algorithm, m)`, sorted by algorithm name then `m`.
pub fn mean_mse_by_cell(rows: &[ResultRow]) -> BTreeMap<&'static str, Vec<(usize, f64)>> {
    let mut acc: BTreeMap<(&'static str, usize), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry((r.algorithm.name(), r.m)).or_default();
        e.0 += r.mse;
        e.1 += 1;
    }
    let mut out: BTreeMap<&'static str, Vec<(usize, f64)>> = BTreeMap::new();
    for ((alg, m), (sum, count)) in acc {
        out.entry(alg).or_default().push((m, sum / count as f64));
    }
    out
}

/// Writes a matplotlib script plotting mean MSE against `m` on a log scale,
/// one series per algorithm. The aggregated points are embedded in the script.
pub fn emit_plot_script(rows: &[ResultRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(DcsError::EmptyInput("result rows"));
    }
    let mut series = String::new();
    for (alg, points) in mean_mse_by_cell(rows) {
        let pts: Vec<String> = points
            .iter()
            .map(|(m, mse)| format!("({m}, {mse:e})"))
            .collect();
        writeln!(series, "    {alg:?}: [{}],", pts.join(", ")).expect("write to String");
    }
    let first = &rows[0];
    let script = format!(
        r#"#!/usr/bin/env python3
# Mean MSE vs number of measurements (J={nodes}, R={bits}).
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

SERIES = {{
{series}}}

fig, ax = plt.subplots(figsize=(6, 4))
for name, points in SERIES.items():
    ms = [p[0] for p in points]
    mse = [p[1] for p in points]
    ax.semilogy(ms, mse, marker="o", label=name)
ax.set_xlabel("measurements per node (m)")
ax.set_ylabel("mean MSE")
ax.grid(True, which="both", alpha=0.3)
ax.legend()
fig.tight_layout()
fig.savefig("mse_vs_m.png", dpi=150)
"#,
        nodes = first.nodes,
        bits = first.bits,
    );
    fs::write(path, script)?;
    Ok(())
}

/// Output files of [`run_to_dir`].
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub csv: PathBuf,
    pub plot_script: PathBuf,
    pub config: PathBuf,
    pub rows: Vec<ResultRow>,
}

/// Runs the sweep and writes `results.csv`, `plot_mse.py` and the resolved
/// `config.json` into `out_dir` (plus `measurements/` when dumping).
pub fn run_to_dir(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    deterministic: bool,
) -> Result<RunOutputs> {
    fs::create_dir_all(out_dir)?;
    let dump_dir = if cfg.dump_measurements && cfg.bits > 0 {
        let dir = out_dir.join("measurements");
        fs::create_dir_all(&dir)?;
        Some(dir)
    } else {
        None
    };
    let rows = run_experiment_dumping(cfg, dump_dir.as_deref())?;
    let out = RunOutputs {
        csv: out_dir.join("results.csv"),
        plot_script: out_dir.join("plot_mse.py"),
        config: out_dir.join("config.json"),
        rows,
    };
    export_csv(&out.rows, &out.csv, deterministic)?;
    emit_plot_script(&out.rows, &out.plot_script)?;
    fs::write(&out.config, cfg.to_json()?)?;
    Ok(out)
}
