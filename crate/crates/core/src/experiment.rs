//! Experiment configuration, Monte Carlo runs, CSV persistence, summary
//! statistics and the invariant validation suite.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::beamform::{
    check_beamformers, dbm_to_watts, fet_harvest, free_charge_range, recover_beamformers, solution_p_op,
    solution_p_pu, solve_division, GroupDivision, RecoveryOptions, RecoveryPath, SystemParams, MW_PER_W,
};
use crate::division::{update_division, Algorithm, DivisionOptions, DivisionRunResult, Termination};
use crate::error::{Error, Result};
use crate::longterm::{longterm_stage_with_channels, training_stage, LongtermResult};
use crate::sdp;
use crate::seeds;
use crate::topology::{draw_channels, generate_topology, ChannelRealization, Complex64, NetworkTopology};

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

// configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub n_rrh: usize,
    pub n_it: usize,
    pub n_et: usize,
    pub inter_rrh_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongtermSpec {
    pub n_trials: usize,
    pub q_training: usize,
    pub q_longterm: usize,
    pub threshold: f64,
    pub algorithm: Algorithm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateSpec {
    pub instances: usize,
    /// Overrides the solver tolerances inside the suite (fault injection).
    pub solver_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub params: SystemParams,
    pub topology: TopologySpec,
    pub seed: u64,
    pub n_trials: usize,
    pub algorithms: Vec<Algorithm>,
    pub record_timing: bool,
    pub sweep: SweepSpec,
    pub division: DivisionOptions,
    pub longterm: LongtermSpec,
    pub validate: ValidateSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            params: SystemParams::reference_defaults(3, 4),
            topology: TopologySpec {
                n_rrh: 3,
                n_it: 4,
                n_et: 7,
                inter_rrh_distance: 20.0,
            },
            seed: 0,
            n_trials: 200,
            algorithms: Algorithm::ALL.to_vec(),
            record_timing: false,
            sweep: SweepSpec {
                param: "p_amin_dbm".into(),
                values: vec![-20.0, -18.0, -17.0, -15.0],
            },
            division: DivisionOptions::default(),
            longterm: LongtermSpec {
                n_trials: 20,
                q_training: 10,
                q_longterm: 50,
                threshold: 0.5,
                algorithm: Algorithm::Alg2,
            },
            validate: ValidateSpec {
                instances: 20,
                solver_tol: None,
            },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    fn expand(&self, n: usize, key: &str) -> Result<Vec<f64>> {
        match self {
            OneOrMany::One(v) => Ok(vec![*v; n]),
            OneOrMany::Many(v) if v.len() == n => Ok(v.clone()),
            OneOrMany::Many(v) => Err(config_err(format!("{key} has {} entries, expected {n}", v.len()))),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSystem {
    sinr_min: Option<f64>,
    sinr_min_db: Option<f64>,
    p_amin: Option<f64>,
    p_amin_dbm: Option<f64>,
    p_fmin: Option<f64>,
    p_fmin_dbm: Option<f64>,
    eta: Option<f64>,
    alpha_abs: Option<f64>,
    p_en: Option<OneOrMany>,
    p_en_dbm: Option<OneOrMany>,
    beta: Option<f64>,
    gamma: Option<f64>,
    noise_power: Option<OneOrMany>,
    noise_power_dbm: Option<OneOrMany>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawTopology {
    n_rrh: Option<usize>,
    n_it: Option<usize>,
    n_et: Option<usize>,
    inter_rrh_distance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawRun {
    seed: Option<u64>,
    n_trials: Option<usize>,
    algorithms: Option<Vec<String>>,
    record_timing: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSweep {
    param: Option<String>,
    values: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawDivision {
    poor_channel_factor: Option<f64>,
    boundary_band: Option<f64>,
    max_division_iters: Option<usize>,
    brute_force_cap: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSolver {
    tol_feas: Option<f64>,
    tol_gap: Option<f64>,
    tol_psd: Option<f64>,
    max_iters: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawLongterm {
    n_trials: Option<usize>,
    q_training: Option<usize>,
    q_longterm: Option<usize>,
    threshold: Option<f64>,
    algorithm: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawValidate {
    instances: Option<usize>,
    solver_tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    system: RawSystem,
    topology: RawTopology,
    run: RawRun,
    sweep: RawSweep,
    division: RawDivision,
    solver: RawSolver,
    longterm: RawLongterm,
    validate: RawValidate,
}

fn pick(plain: Option<f64>, dbm: Option<f64>, key: &str) -> Result<Option<f64>> {
    match (plain, dbm) {
        (Some(_), Some(_)) => Err(config_err(format!("both {key} and {key}_dbm are set"))),
        (Some(w), None) => Ok(Some(w)),
        (None, Some(d)) => Ok(Some(dbm_to_watts(d))),
        (None, None) => Ok(None),
    }
}

fn pick_list(plain: &Option<OneOrMany>, dbm: &Option<OneOrMany>, n: usize, key: &str) -> Result<Option<Vec<f64>>> {
    match (plain, dbm) {
        (Some(_), Some(_)) => Err(config_err(format!("both {key} and {key}_dbm are set"))),
        (Some(w), None) => Ok(Some(w.expand(n, key)?)),
        (None, Some(d)) => Ok(Some(d.expand(n, key)?.into_iter().map(dbm_to_watts).collect())),
        (None, None) => Ok(None),
    }
}

pub fn parse_algorithms<S: AsRef<str>>(names: &[S]) -> Result<Vec<Algorithm>> {
    let mut out: Vec<Algorithm> = Vec::new();
    for n in names {
        let a: Algorithm = n.as_ref().parse()?;
        if !out.contains(&a) {
            out.push(a);
        }
    }
    if out.is_empty() {
        return Err(config_err("at least one algorithm must be selected"));
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        let mut cfg = Self::default();
        let t = &raw.topology;
        cfg.topology.n_rrh = t.n_rrh.unwrap_or(cfg.topology.n_rrh);
        cfg.topology.n_it = t.n_it.unwrap_or(cfg.topology.n_it);
        cfg.topology.n_et = t.n_et.unwrap_or(cfg.topology.n_et);
        cfg.topology.inter_rrh_distance = t.inter_rrh_distance.unwrap_or(cfg.topology.inter_rrh_distance);
        let (n_rrh, n_it) = (cfg.topology.n_rrh, cfg.topology.n_it);

        let s = &raw.system;
        let mut p = SystemParams::reference_defaults(n_rrh, n_it);
        match (s.sinr_min, s.sinr_min_db) {
            (Some(_), Some(_)) => return Err(config_err("both sinr_min and sinr_min_db are set")),
            (Some(v), None) => p.sinr_min = v,
            (None, Some(db)) => p.sinr_min = 10f64.powf(db / 10.0),
            (None, None) => {}
        }
        if let Some(v) = pick(s.p_amin, s.p_amin_dbm, "p_amin")? {
            p.p_amin = v;
        }
        if let Some(v) = pick(s.p_fmin, s.p_fmin_dbm, "p_fmin")? {
            p.p_fmin = v;
        }
        if let Some(v) = pick_list(&s.p_en, &s.p_en_dbm, n_rrh, "p_en")? {
            p.p_en = v;
        }
        if let Some(v) = pick_list(&s.noise_power, &s.noise_power_dbm, n_it, "noise_power")? {
            p.noise_power = v;
        }
        p.eta = s.eta.unwrap_or(p.eta);
        p.alpha_abs = s.alpha_abs.unwrap_or(p.alpha_abs);
        p.beta = s.beta.unwrap_or(p.beta);
        p.gamma = s.gamma.unwrap_or(p.gamma);
        cfg.params = p;

        let r = &raw.run;
        cfg.seed = r.seed.unwrap_or(cfg.seed);
        cfg.n_trials = r.n_trials.unwrap_or(cfg.n_trials);
        if let Some(a) = &r.algorithms {
            cfg.algorithms = parse_algorithms(a)?;
        }
        cfg.record_timing = r.record_timing.unwrap_or(false);

        if let Some(param) = &raw.sweep.param {
            cfg.sweep.param = param.clone();
        }
        if let Some(values) = &raw.sweep.values {
            cfg.sweep.values = values.clone();
        }

        let d = &raw.division;
        let div = &mut cfg.division;
        div.poor_channel_factor = d.poor_channel_factor.unwrap_or(div.poor_channel_factor);
        div.boundary_band = d.boundary_band.unwrap_or(div.boundary_band);
        div.max_division_iters = d.max_division_iters.unwrap_or(div.max_division_iters);
        div.brute_force_cap = d.brute_force_cap.unwrap_or(div.brute_force_cap);
        let sv = &raw.solver;
        let so = &mut div.solver;
        so.tol_feas = sv.tol_feas.unwrap_or(so.tol_feas);
        so.tol_gap = sv.tol_gap.unwrap_or(so.tol_gap);
        so.tol_psd = sv.tol_psd.unwrap_or(so.tol_psd);
        so.max_iters = sv.max_iters.unwrap_or(so.max_iters);

        let l = &raw.longterm;
        let lt = &mut cfg.longterm;
        lt.n_trials = l.n_trials.unwrap_or(lt.n_trials);
        lt.q_training = l.q_training.unwrap_or(lt.q_training);
        lt.q_longterm = l.q_longterm.unwrap_or(lt.q_longterm);
        lt.threshold = l.threshold.unwrap_or(lt.threshold);
        if let Some(a) = &l.algorithm {
            lt.algorithm = a.parse()?;
        }
        cfg.validate.instances = raw.validate.instances.unwrap_or(cfg.validate.instances);
        cfg.validate.solver_tol = raw.validate.solver_tol;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::Parameter(m) => config_err(m),
            other => other,
        };
        let t = &self.topology;
        if t.n_rrh == 0 || t.n_it == 0 {
            return Err(config_err("topology needs at least one RRH and one IT"));
        }
        if t.n_et > 63 {
            return Err(config_err("at most 63 ETs are supported"));
        }
        if !(t.inter_rrh_distance.is_finite() && t.inter_rrh_distance > 0.0) {
            return Err(config_err("inter_rrh_distance must be positive"));
        }
        if self.params.p_en.len() != t.n_rrh || self.params.noise_power.len() != t.n_it {
            return Err(config_err("p_en / noise_power lengths do not match the topology"));
        }
        self.params.validate().map_err(wrap)?;
        self.division.validate().map_err(wrap)?;
        if self.algorithms.is_empty() {
            return Err(config_err("at least one algorithm must be selected"));
        }
        if self.algorithms.contains(&Algorithm::BruteForce) && t.n_et > self.division.brute_force_cap {
            return Err(config_err(format!(
                "brute force over {} ETs exceeds the cap of {}",
                t.n_et, self.division.brute_force_cap
            )));
        }
        if self.sweep.values.is_empty() {
            return Err(config_err("sweep.values must not be empty"));
        }
        for &v in &self.sweep.values {
            let mut c = self.clone();
            c.sweep.values = vec![0.0];
            apply_sweep(&mut c, &self.sweep.param, v)?;
            c.params.validate().map_err(wrap)?;
        }
        let lt = &self.longterm;
        if lt.q_training == 0 {
            return Err(config_err("longterm.q_training must be at least 1"));
        }
        if !(0.0..=1.0).contains(&lt.threshold) {
            return Err(config_err("longterm.threshold must lie in [0, 1]"));
        }
        if !matches!(lt.algorithm, Algorithm::Alg1 | Algorithm::Alg2) {
            return Err(config_err("longterm.algorithm must be alg1 or alg2"));
        }
        if let Some(tol) = self.validate.solver_tol {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(config_err("validate.solver_tol must be positive"));
            }
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Sets the named parameter to a sweep value.
pub fn apply_sweep(cfg: &mut ExperimentConfig, param: &str, value: f64) -> Result<()> {
    let p = &mut cfg.params;
    match param {
        "sinr_min" => p.sinr_min = value,
        "sinr_min_db" => p.sinr_min = 10f64.powf(value / 10.0),
        "p_amin" => p.p_amin = value,
        "p_amin_dbm" => p.p_amin = dbm_to_watts(value),
        "p_fmin" => p.p_fmin = value,
        "p_fmin_dbm" => p.p_fmin = dbm_to_watts(value),
        "eta" => p.eta = value,
        "alpha_abs" => p.alpha_abs = value,
        "beta" => p.beta = value,
        "gamma" => p.gamma = value,
        "p_en" => p.p_en.iter_mut().for_each(|x| *x = value),
        "noise_power" => p.noise_power.iter_mut().for_each(|x| *x = value),
        "noise_power_dbm" => p.noise_power.iter_mut().for_each(|x| *x = dbm_to_watts(value)),
        "inter_rrh_distance" => cfg.topology.inter_rrh_distance = value,
        "n_et" => {
            if value < 0.0 || value.fract() != 0.0 {
                return Err(config_err("n_et sweep values must be non-negative integers"));
            }
            cfg.topology.n_et = value as usize;
        }
        other => return Err(config_err(format!("unknown sweep parameter `{other}`"))),
    }
    Ok(())
}

// rows

pub const CSV_COLUMNS: [&str; 15] = [
    "config_hash",
    "mode",
    "trial",
    "slot",
    "sweep_param",
    "sweep_value",
    "algorithm",
    "status",
    "objective_mw",
    "p_op_total_mw",
    "p_pu_total_mw",
    "division_bitmask",
    "iterations",
    "termination",
    "solve_ms",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub config_hash: String,
    pub mode: String,
    pub trial: u64,
    pub slot: Option<u64>,
    pub sweep_param: Option<String>,
    pub sweep_value: Option<f64>,
    pub algorithm: String,
    pub status: String,
    pub objective_mw: Option<f64>,
    pub p_op_total_mw: Option<f64>,
    pub p_pu_total_mw: Option<f64>,
    pub division_bitmask: Option<u64>,
    pub iterations: Option<usize>,
    pub termination: Option<String>,
    pub solve_ms: Option<f64>,
}

impl Row {
    fn new(hash: &str, mode: &str, trial: u64, algorithm: &str) -> Self {
        Self {
            config_hash: hash.to_string(),
            mode: mode.to_string(),
            trial,
            slot: None,
            sweep_param: None,
            sweep_value: None,
            algorithm: algorithm.to_string(),
            status: "ok".into(),
            objective_mw: None,
            p_op_total_mw: None,
            p_pu_total_mw: None,
            division_bitmask: None,
            iterations: None,
            termination: None,
            solve_ms: None,
        }
    }

    fn with_run(mut self, run: &DivisionRunResult) -> Self {
        self.status = if run.is_feasible() { "ok" } else { "infeasible" }.into();
        if let Some(r) = &run.report {
            self.objective_mw = Some(r.objective * MW_PER_W);
            self.p_op_total_mw = Some(r.p_op_total() * MW_PER_W);
            self.p_pu_total_mw = Some(r.p_pu_total() * MW_PER_W);
            self.division_bitmask = Some(run.final_division.bitmask());
        }
        self.iterations = Some(run.iterations);
        self.termination = Some(run.termination.as_str().into());
        self
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub rows: Vec<Row>,
    pub summary: String,
}

pub fn rows_to_csv(rows: &[Row], header: bool) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(Vec::new());
    if rows.is_empty() && header {
        w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| config_err(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => config_err(format!("{other:?}")),
    }
}

/// Writes `rows` to `path`. With `append`, an existing file must carry the
/// same header and only rows with `hash`.
pub fn write_csv(path: &Path, rows: &[Row], hash: &str, append: bool) -> Result<()> {
    use std::io::Write;
    let existing = append && path.exists() && std::fs::metadata(path)?.len() > 0;
    if existing {
        let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
        let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(String::from).collect();
        if header != CSV_COLUMNS {
            return Err(config_err(format!("{} does not have the expected columns", path.display())));
        }
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            if rec.get(0) != Some(hash) {
                return Err(config_err(format!(
                    "{} holds rows of config {}, refusing to append rows of config {hash}",
                    path.display(),
                    rec.get(0).unwrap_or("")
                )));
            }
        }
    }
    let text = rows_to_csv(rows, !existing)?;
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(existing)
        .truncate(!existing)
        .open(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

// statistics

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub t: f64,
    /// One-sided p-value for a positive mean difference.
    pub p_value: f64,
}

pub fn paired_one_sided(diffs: &[f64]) -> Option<PairedTest> {
    let n = diffs.len();
    if n < 2 {
        return None;
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let (t, p_value) = if sd == 0.0 {
        let t = if mean > 0.0 {
            f64::INFINITY
        } else if mean < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        };
        (t, if mean > 0.0 { 0.0 } else if mean < 0.0 { 1.0 } else { 0.5 })
    } else {
        let t = mean / (sd / (n as f64).sqrt());
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid degrees of freedom");
        (t, 1.0 - dist.cdf(t))
    };
    Some(PairedTest { n, mean, sd, t, p_value })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgorithmStats {
    pub sweep_value: Option<f64>,
    pub algorithm: String,
    pub trials: usize,
    pub feasible: usize,
    pub mean_objective_mw: Option<f64>,
}

impl AlgorithmStats {
    pub fn infeasibility_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            1.0 - self.feasible as f64 / self.trials as f64
        }
    }
}

fn value_key(v: Option<f64>) -> Option<u64> {
    v.map(f64::to_bits)
}

/// Per (sweep value, algorithm) means over the rows of `mode`, in order of appearance.
pub fn algorithm_stats(rows: &[Row], mode: &str) -> Vec<AlgorithmStats> {
    let mut order: Vec<(Option<u64>, String)> = Vec::new();
    let mut acc: BTreeMap<(Option<u64>, String), (Option<f64>, usize, usize, f64)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.mode == mode) {
        let key = (value_key(r.sweep_value), r.algorithm.clone());
        let e = acc.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (r.sweep_value, 0, 0, 0.0)
        });
        e.1 += 1;
        if let (true, Some(o)) = (r.is_ok(), r.objective_mw) {
            e.2 += 1;
            e.3 += o;
        }
    }
    order
        .into_iter()
        .map(|k| {
            let (v, trials, feasible, sum) = acc[&k];
            AlgorithmStats {
                sweep_value: v,
                algorithm: k.1,
                trials,
                feasible,
                mean_objective_mw: (feasible > 0).then(|| sum / feasible as f64),
            }
        })
        .collect()
}

/// Per-trial `baseline - candidate` objective differences over trials where
/// both succeeded.
pub fn paired_differences(rows: &[Row], mode: &str, sweep_value: Option<f64>, baseline: &str, candidate: &str) -> Vec<f64> {
    let pick = |alg: &str| -> BTreeMap<u64, f64> {
        rows.iter()
            .filter(|r| r.mode == mode && r.algorithm == alg && value_key(r.sweep_value) == value_key(sweep_value))
            .filter_map(|r| r.is_ok().then_some(()).and(r.objective_mw).map(|o| (r.trial, o)))
            .collect()
    };
    let b = pick(baseline);
    let c = pick(candidate);
    b.iter().filter_map(|(t, bv)| c.get(t).map(|cv| bv - cv)).collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn stats_table(rows: &[Row], mode: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>12} {:>12} {:>7} {:>9} {:>16}", "sweep_value", "algorithm", "trials", "infeas", "mean_obj_mw");
    for st in algorithm_stats(rows, mode) {
        let _ = writeln!(
            s,
            "{:>12} {:>12} {:>7} {:>9.3} {:>16}",
            st.sweep_value.map_or_else(|| "-".into(), |v| v.to_string()),
            st.algorithm,
            st.trials,
            st.infeasibility_rate(),
            fmt_opt(st.mean_objective_mw)
        );
    }
    s
}

fn advantage_lines(rows: &[Row], mode: &str, values: &[Option<f64>]) -> String {
    let mut s = String::new();
    for v in values {
        for cand in ["alg1", "alg2"] {
            if let Some(t) = paired_one_sided(&paired_differences(rows, mode, *v, "all_met", cand)) {
                let _ = writeln!(
                    s,
                    "advantage all_met - {cand} at {}: mean {:.4} mW, n {}, t {:.3}, p {:.3e}",
                    v.map_or_else(|| "-".into(), |v| v.to_string()),
                    t.mean,
                    t.n,
                    t.t,
                    t.p_value
                );
            }
        }
    }
    s
}

// single slot and sweep

pub fn trial_seed(cfg: &ExperimentConfig, trial: u64) -> u64 {
    seeds::derive(cfg.seed, seeds::DOMAIN_TRIAL, trial)
}

/// Topology and slot-0 channels of a trial.
pub fn trial_instance(cfg: &ExperimentConfig, trial: u64) -> Result<(NetworkTopology, ChannelRealization)> {
    let s = trial_seed(cfg, trial);
    let t = &cfg.topology;
    let topo = generate_topology(s, t.n_rrh, t.n_it, t.n_et, t.inter_rrh_distance)?;
    let ch = draw_channels(&topo, s, 0, cfg.params.alpha_abs)?;
    Ok((topo, ch))
}

fn slot_rows(cfg: &ExperimentConfig, hash: &str, mode: &str, sweep: Option<(&str, f64)>) -> Result<Vec<Row>> {
    let per_trial = (0..cfg.n_trials as u64)
        .into_par_iter()
        .map(|trial| {
            let (topo, ch) = trial_instance(cfg, trial)?;
            cfg.algorithms
                .iter()
                .map(|alg| {
                    let start = Instant::now();
                    let run = alg.run(&topo, &ch, &cfg.params, &cfg.division)?;
                    let mut row = Row::new(hash, mode, trial, alg.as_str()).with_run(&run);
                    row.slot = Some(0);
                    if let Some((p, v)) = sweep {
                        row.sweep_param = Some(p.to_string());
                        row.sweep_value = Some(v);
                    }
                    if cfg.record_timing {
                        row.solve_ms = Some(start.elapsed().as_secs_f64() * 1e3);
                    }
                    Ok(row)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

pub fn run_single_slot(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let hash = cfg.hash();
    let rows = slot_rows(cfg, &hash, "single-slot", None)?;
    let mut summary = format!("config {hash}: single-slot, {} trials\n", cfg.n_trials);
    summary += &stats_table(&rows, "single-slot");
    summary += &advantage_lines(&rows, "single-slot", &[None]);
    Ok(RunOutput { rows, summary })
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let hash = cfg.hash();
    let mut rows = Vec::new();
    for &v in &cfg.sweep.values {
        let mut c = cfg.clone();
        apply_sweep(&mut c, &cfg.sweep.param, v)?;
        rows.extend(slot_rows(&c, &hash, "sweep", Some((&cfg.sweep.param, v)))?);
    }
    let mut summary = format!(
        "config {hash}: sweep over {} = {:?}, {} trials each\n",
        cfg.sweep.param, cfg.sweep.values, cfg.n_trials
    );
    summary += &stats_table(&rows, "sweep");
    let values: Vec<Option<f64>> = cfg.sweep.values.iter().map(|v| Some(*v)).collect();
    summary += &advantage_lines(&rows, "sweep", &values);
    Ok(RunOutput { rows, summary })
}

// long term

pub const FROZEN_HYBRID: &str = "frozen_hybrid";

fn longterm_rows(
    hash: &str,
    trial: u64,
    algorithm: &str,
    division: &GroupDivision,
    result: &LongtermResult,
) -> Vec<Row> {
    result
        .slots
        .iter()
        .map(|s| {
            let mut row = Row::new(hash, "longterm", trial, algorithm);
            row.slot = Some(s.slot);
            row.iterations = Some(1);
            match &s.report {
                Some(r) => {
                    row.objective_mw = Some(r.objective * MW_PER_W);
                    row.p_op_total_mw = Some(r.p_op_total() * MW_PER_W);
                    row.p_pu_total_mw = Some(r.p_pu_total() * MW_PER_W);
                    row.division_bitmask = Some(division.bitmask());
                    row.termination = Some(Termination::Direct.as_str().into());
                }
                None => {
                    row.status = "infeasible".into();
                    row.termination = Some(Termination::Infeasible.as_str().into());
                }
            }
            row
        })
        .collect()
}

fn longterm_trial(cfg: &ExperimentConfig, hash: &str, trial: u64) -> Result<Vec<Row>> {
    let lt = &cfg.longterm;
    let s = trial_seed(cfg, trial);
    let t = &cfg.topology;
    let topo = generate_topology(s, t.n_rrh, t.n_it, t.n_et, t.inter_rrh_distance)?;
    let mut rows = Vec::new();
    let frozen = match training_stage(&topo, s, lt.q_training, lt.threshold, &cfg.params, lt.algorithm, &cfg.division) {
        Ok(tr) => {
            for (slot, run) in tr.slot_runs.iter().enumerate() {
                let mut row = Row::new(hash, "training", trial, lt.algorithm.as_str());
                row.slot = Some(slot as u64);
                row = match run {
                    Some(run) => row.with_run(run),
                    None => {
                        row.status = "infeasible".into();
                        row.termination = Some(Termination::Infeasible.as_str().into());
                        row
                    }
                };
                rows.push(row);
            }
            let mut row = Row::new(hash, "training", trial, FROZEN_HYBRID);
            row.division_bitmask = Some(tr.frozen_division.bitmask());
            row.iterations = Some(tr.slots_used);
            rows.push(row);
            Some(tr.frozen_division)
        }
        Err(Error::TrainingFailed) => {
            let mut row = Row::new(hash, "training", trial, FROZEN_HYBRID);
            row.status = "training_failed".into();
            rows.push(row);
            None
        }
        Err(e) => return Err(e),
    };
    let first = lt.q_training as u64;
    let slots = (first..first + lt.q_longterm as u64)
        .map(|k| Ok((k, draw_channels(&topo, s, k, cfg.params.alpha_abs)?)))
        .collect::<Result<Vec<_>>>()?;
    let n = topo.n_et();
    let mut plans: Vec<(&str, GroupDivision)> = Vec::new();
    if let Some(d) = frozen {
        plans.push((FROZEN_HYBRID, d));
    }
    plans.push((Algorithm::AllFet.as_str(), GroupDivision::all_fet(n)));
    plans.push((Algorithm::AllMet.as_str(), GroupDivision::all_met(n)));
    for (name, d) in plans {
        let res = longterm_stage_with_channels(&topo, &d, &slots, &cfg.params, &cfg.division)?;
        rows.extend(longterm_rows(hash, trial, name, &d, &res));
    }
    Ok(rows)
}

/// Per-trial cumulative long-term consumption (mW) of `algorithm`, keyed by trial.
pub fn longterm_totals(rows: &[Row], algorithm: &str) -> BTreeMap<u64, f64> {
    let mut out = BTreeMap::new();
    for r in rows.iter().filter(|r| r.mode == "longterm" && r.algorithm == algorithm) {
        *out.entry(r.trial).or_insert(0.0) += r.objective_mw.unwrap_or(0.0);
    }
    out
}

/// Mean cumulative consumption (mW) by long-term slot position, over trials.
pub fn mean_cumulative(rows: &[Row], algorithm: &str) -> Vec<f64> {
    let mut per_trial: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.mode == "longterm" && r.algorithm == algorithm) {
        let v = per_trial.entry(r.trial).or_default();
        let prev = v.last().copied().unwrap_or(0.0);
        v.push(prev + r.objective_mw.unwrap_or(0.0));
    }
    let len = per_trial.values().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|k| per_trial.values().map(|v| v[k]).sum::<f64>() / per_trial.len() as f64)
        .collect()
}

pub fn run_longterm(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let hash = cfg.hash();
    let rows: Vec<Row> = (0..cfg.longterm.n_trials as u64)
        .into_par_iter()
        .map(|t| longterm_trial(cfg, &hash, t))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let lt = &cfg.longterm;
    let mut s = format!(
        "config {hash}: longterm, {} trials, q_training {}, q_longterm {}\n",
        lt.n_trials, lt.q_training, lt.q_longterm
    );
    let failed = rows.iter().filter(|r| r.status == "training_failed").count();
    let _ = writeln!(s, "training failures: {failed}");
    let names = [FROZEN_HYBRID, "all_fet", "all_met"];
    let curves: Vec<Vec<f64>> = names.iter().map(|n| mean_cumulative(&rows, n)).collect();
    if lt.q_longterm > 0 {
        let _ = writeln!(s, "{:>6} {:>16} {:>16} {:>16}", "slot", names[0], names[1], names[2]);
        for k in 0..lt.q_longterm {
            let cell = |c: &Vec<f64>| c.get(k).map_or_else(|| "-".into(), |v| format!("{v:.4}"));
            let _ = writeln!(s, "{:>6} {:>16} {:>16} {:>16}", k, cell(&curves[0]), cell(&curves[1]), cell(&curves[2]));
        }
        for n in ["all_fet", "all_met", FROZEN_HYBRID] {
            let lr: Vec<&Row> = rows.iter().filter(|r| r.mode == "longterm" && r.algorithm == n).collect();
            let infeasible = lr.iter().filter(|r| !r.is_ok()).count();
            let _ = writeln!(s, "{n} slot infeasibility rate: {:.4}", infeasible as f64 / lr.len().max(1) as f64);
        }
        let hybrid = longterm_totals(&rows, FROZEN_HYBRID);
        let met = longterm_totals(&rows, "all_met");
        let diffs: Vec<f64> = hybrid.iter().filter_map(|(t, h)| met.get(t).map(|m| m - h)).collect();
        if let Some(t) = paired_one_sided(&diffs) {
            let _ = writeln!(
                s,
                "cumulative all_met - frozen_hybrid: mean {:.4} mW, n {}, t {:.3}, p {:.3e}",
                t.mean, t.n, t.t, t.p_value
            );
        }
    }
    Ok(RunOutput { rows, summary: s })
}

// validation suite

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub failures: Vec<String>,
}

impl CheckResult {
    fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            cases: 0,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures.push(what());
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{} {} ({} cases)",
                if c.passed() { "PASS" } else { "FAIL" },
                c.name,
                c.cases
            );
            for f in &c.failures {
                let _ = writeln!(s, "    {f}");
            }
        }
        s
    }
}

fn validation_division(seed: u64, n_et: usize) -> GroupDivision {
    let mut rng = seeds::rng(seed, seeds::DOMAIN_VALIDATE, 1);
    GroupDivision::from_flags((0..n_et).map(|_| rng.random_bool(0.5)).collect())
}

fn history_is_sound(run: &DivisionRunResult, n_et: usize) -> bool {
    run.history.iter().all(|h| {
        let d = &h.division;
        let (met, fet) = (d.met_set(), d.fet_set());
        d.n_et() == n_et
            && met.len() + fet.len() == n_et
            && GroupDivision::from_sets(&met, &fet, n_et).is_ok_and(|x| &x == d)
    })
}

fn history_terminates(run: &DivisionRunResult, cap: usize) -> bool {
    let body = &run.history[..run.history.len().saturating_sub(1)];
    let distinct = body.iter().enumerate().all(|(i, a)| body[i + 1..].iter().all(|b| b.division != a.division));
    run.iterations <= cap && run.iterations <= body.len() + 1 && distinct
}

/// Runs the invariant suite on generated instances.
pub fn run_validate(cfg: &ExperimentConfig) -> Result<ValidationReport> {
    cfg.validate()?;
    let mut solver = cfg.division.solver;
    if let Some(tol) = cfg.validate.solver_tol {
        solver.tol_feas = tol;
        solver.tol_gap = tol;
    }
    let mut dopts = cfg.division;
    dopts.solver = solver;
    let t = &cfg.topology;
    let mut residuals = CheckResult::new("solver_residuals");
    let mut recovery = CheckResult::new("recovery_soundness");
    let mut clamp = CheckResult::new("p_pu_clamp");
    let mut inversion = CheckResult::new("range_harvest_inversion");
    let mut partition = CheckResult::new("partition");
    let mut idempotence = CheckResult::new("fixed_point_idempotence");
    let mut termination = CheckResult::new("termination");
    let mut sandwich = CheckResult::new("optimality_sandwich");
    let mut isolation = CheckResult::new("fet_csi_isolation");
    let mut determinism = CheckResult::new("determinism");

    let mut inv_rng = seeds::rng(cfg.seed, seeds::DOMAIN_VALIDATE, u64::MAX);
    for _ in 0..1000 {
        let p_op = 10f64.powf(inv_rng.random_range(-4.0..3.0));
        let r = free_charge_range(p_op, &cfg.params);
        let ok = r == 0.0 || (fet_harvest(p_op, r, &cfg.params) - cfg.params.p_fmin).abs() <= 1e-9 * cfg.params.p_fmin;
        inversion.record(ok, || format!("p_op {p_op:e}: range {r}"));
    }

    for k in 0..cfg.validate.instances as u64 {
        let seed = seeds::derive(cfg.seed, seeds::DOMAIN_VALIDATE, k);
        let topo = generate_topology(seed, t.n_rrh, t.n_it, t.n_et, t.inter_rrh_distance)?;
        let ch = draw_channels(&topo, seed, 0, cfg.params.alpha_abs)?;
        let mut params = cfg.params.clone();
        if k % 2 == 1 {
            params.p_en.iter_mut().for_each(|p| *p *= 0.005);
        }
        let division = validation_division(seed, t.n_et);
        let tag = format!("instance seed {seed} (index {k})");

        let (sdp_inst, sol) = solve_division(&topo, &ch, &division, &params, &solver)?;
        if !sol.is_optimal() {
            residuals.record(false, || format!("{tag}: status {}", sol.status.as_str()));
            continue;
        }
        let v = sdp::verify(&sdp_inst.problem, &sol, 1e-7)?;
        residuals.record(v.passed && v.max_violation <= 1e-7, || {
            format!("{tag}: violation {:.3e}, psd {:.3e}", v.max_violation, v.psd_violation)
        });
        let p_op = solution_p_op(&sol, topo.n_rrh());
        let clamp_err = solution_p_pu(&sol)
            .iter()
            .zip(p_op.iter().zip(&params.p_en))
            .map(|(pu, (op, en))| (pu - (op - en).max(0.0)).abs())
            .fold(0.0, f64::max);
        clamp.record(clamp_err <= 1e-7, || format!("{tag}: p_pu clamp error {clamp_err:.3e} W"));

        let ropts = RecoveryOptions {
            seed: seeds::derive(seed, seeds::DOMAIN_RECOVERY, 0),
            ..RecoveryOptions::default()
        };
        match recover_beamformers(&sdp_inst, &sol, &ropts, &solver) {
            Ok(rec) => {
                let worst = check_beamformers(&sdp_inst, &rec.beamformers).worst();
                let infl = rec.inflation();
                let ok = worst <= 1e-5 && (rec.path != RecoveryPath::RankOne || infl <= 1e-4);
                recovery.record(ok, || format!("{tag}: worst violation {worst:.3e}, inflation {infl:.3e}"));
            }
            Err(e) => recovery.record(false, || format!("{tag}: {e}")),
        }

        let mut runs = vec![
            Algorithm::Alg1.run(&topo, &ch, &params, &dopts)?,
            Algorithm::Alg2.run(&topo, &ch, &params, &dopts)?,
        ];
        for run in &runs {
            partition.record(history_is_sound(run, t.n_et), || format!("{tag}: malformed history"));
            termination.record(history_terminates(run, dopts.max_division_iters), || {
                format!("{tag}: {} rounds, termination {}", run.iterations, run.termination.as_str())
            });
            if run.termination == Termination::FixedPoint {
                let (next, _) = update_division(&topo, &ch, &run.final_division, &params, &dopts)?;
                idempotence.record(next == run.final_division, || {
                    format!("{tag}: {} -> {}", run.final_division.bitstring(), next.bitstring())
                });
            }
        }
        if t.n_et <= dopts.brute_force_cap {
            let bf = Algorithm::BruteForce.run(&topo, &ch, &params, &dopts)?;
            partition.record(history_is_sound(&bf, t.n_et), || format!("{tag}: malformed brute-force history"));
            if let Some(best) = bf.objective() {
                runs.push(Algorithm::AllFet.run(&topo, &ch, &params, &dopts)?);
                runs.push(Algorithm::AllMet.run(&topo, &ch, &params, &dopts)?);
                for run in &runs {
                    let ok = run.objective().is_none_or(|o| o * MW_PER_W >= best * MW_PER_W - 1e-6);
                    sandwich.record(ok, || format!("{tag}: {:?} below brute force {best}", run.objective()));
                }
            }
        }

        let slots: Vec<(u64, ChannelRealization)> = (1..3)
            .map(|s| Ok((s, draw_channels(&topo, seed, s, params.alpha_abs)?)))
            .collect::<Result<Vec<_>>>()?;
        let masked: Vec<(u64, ChannelRealization)> = slots
            .iter()
            .map(|(s, ch)| {
                let mut ch = ch.clone();
                for et in division.fet_set() {
                    ch.h_et.column_mut(et).fill(Complex64::new(0.0, 0.0));
                }
                (*s, ch)
            })
            .collect();
        let a = longterm_stage_with_channels(&topo, &division, &slots, &params, &dopts)?;
        let b = longterm_stage_with_channels(&topo, &division, &masked, &params, &dopts)?;
        isolation.record(serde_json::to_string(&a).ok() == serde_json::to_string(&b).ok(), || {
            format!("{tag}: output depends on frozen-FET channels")
        });
    }

    let mut small = cfg.clone();
    small.n_trials = 2;
    small.longterm.n_trials = 1;
    small.longterm.q_training = 2;
    small.longterm.q_longterm = 2;
    small.record_timing = false;
    small.algorithms.retain(|a| *a != Algorithm::BruteForce || t.n_et <= 8);
    for (name, f) in [
        ("single-slot", run_single_slot as fn(&ExperimentConfig) -> Result<RunOutput>),
        ("longterm", run_longterm),
    ] {
        let a = rows_to_csv(&f(&small)?.rows, true)?;
        let b = rows_to_csv(&f(&small)?.rows, true)?;
        determinism.record(a == b, || format!("{name} rerun with seed {} differs", small.seed));
    }

    Ok(ValidationReport {
        checks: vec![
            residuals,
            recovery,
            clamp,
            inversion,
            partition,
            idempotence,
            termination,
            sandwich,
            isolation,
            determinism,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            r#"
            topology.n_et = 3
            run.n_trials = 3
            run.seed = 11
            sweep.values = [-17.0, -15.0]
            longterm.n_trials = 2
            longterm.q_training = 3
            longterm.q_longterm = 2
            validate.instances = 2
            "#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_and_dbm_keys() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        let cfg = ExperimentConfig::from_toml_str(
            "system.p_amin_dbm = -15\nsystem.noise_power_dbm = -40\nsystem.p_en = [1, 2, 3]\n[topology]\nn_et = 2",
        )
        .unwrap();
        assert!((cfg.params.p_amin - 10f64.powf(-1.5) * 1e-3).abs() < 1e-18);
        assert!((cfg.params.noise_power[3] - 1e-7).abs() < 1e-20);
        assert_eq!(cfg.params.p_en, vec![1.0, 2.0, 3.0]);
        assert_eq!(cfg.topology.n_et, 2);
    }

    #[test]
    fn config_errors() {
        for bad in [
            "system.p_amin = 1e-5\nsystem.p_amin_dbm = -20",
            "system.bogus = 1",
            "run.algorithms = [\"alg9\"]",
            "system.p_en = [1, 2]",
            "system.p_fmin_dbm = -10",
            "topology.n_et = 13",
            "sweep.param = \"colour\"",
            "sweep.values = [-30.0]",
            "longterm.threshold = 2.0",
            "system.beta = 0",
        ] {
            assert!(matches!(ExperimentConfig::from_toml_str(bad), Err(Error::Config(_))), "{bad}");
        }
        assert!(ExperimentConfig::from_toml_str("topology.n_et = 13\nrun.algorithms = [\"alg1\"]").is_ok());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn paired_test_matches_reference() {
        // scipy.stats.ttest_1samp([1, 2, 3, 4, 5.5], 0, alternative="greater")
        let t = paired_one_sided(&[1.0, 2.0, 3.0, 4.0, 5.5]).unwrap();
        assert!((t.t - 3.969143277919775).abs() < 1e-9, "{}", t.t);
        assert!((t.p_value - 0.008275269850514081).abs() < 1e-9, "{}", t.p_value);
        assert_eq!(paired_one_sided(&[2.0, 2.0]).unwrap().p_value, 0.0);
        assert!(paired_one_sided(&[1.0]).is_none());
    }

    #[test]
    fn single_slot_rows_and_determinism() {
        let cfg = tiny();
        let out = run_single_slot(&cfg).unwrap();
        assert_eq!(out.rows.len(), 3 * 5);
        let a = rows_to_csv(&out.rows, true).unwrap();
        assert_eq!(a.lines().next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(a, rows_to_csv(&run_single_slot(&cfg).unwrap().rows, true).unwrap());
        assert!(out.rows.iter().all(|r| r.solve_ms.is_none() && r.config_hash == cfg.hash()));
        let mut more = cfg.clone();
        more.n_trials = 4;
        let b = run_single_slot(&more).unwrap();
        assert_eq!(&b.rows[..15].iter().map(|r| &r.objective_mw).collect::<Vec<_>>(), &out.rows.iter().map(|r| &r.objective_mw).collect::<Vec<_>>());
    }

    #[test]
    fn sweep_single_point_equals_single_slot() {
        let mut cfg = tiny();
        cfg.sweep.param = "p_amin_dbm".into();
        cfg.sweep.values = vec![-17.0];
        let s = run_sweep(&cfg).unwrap();
        let one = run_single_slot(&cfg).unwrap();
        assert_eq!(s.rows.len(), one.rows.len());
        for (a, b) in s.rows.iter().zip(&one.rows) {
            assert_eq!(a.objective_mw, b.objective_mw);
            assert_eq!(a.sweep_value, Some(-17.0));
        }
    }

    #[test]
    fn longterm_output_shape() {
        let cfg = tiny();
        let out = run_longterm(&cfg).unwrap();
        for trial in 0..2 {
            let tr = out.rows.iter().filter(|r| r.trial == trial && r.mode == "training").count();
            let lt = out.rows.iter().filter(|r| r.trial == trial && r.mode == "longterm").count();
            assert_eq!(tr, 3 + 1);
            assert_eq!(lt, 3 * 2);
        }
        assert_eq!(mean_cumulative(&out.rows, "all_met").len(), 2);
        let mut none = cfg.clone();
        none.longterm.q_longterm = 0;
        let out = run_longterm(&none).unwrap();
        assert!(out.rows.iter().all(|r| r.mode == "training"));
    }

    #[test]
    fn append_rejects_other_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        let cfg = tiny();
        let out = run_single_slot(&cfg).unwrap();
        write_csv(&path, &out.rows, &cfg.hash(), false).unwrap();
        write_csv(&path, &out.rows, &cfg.hash(), true).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * out.rows.len());
        let mut other = cfg.clone();
        other.seed = 99;
        let o = run_single_slot(&other).unwrap();
        assert!(matches!(write_csv(&path, &o.rows, &other.hash(), true), Err(Error::Config(_))));
        write_csv(&path, &o.rows, &other.hash(), false).unwrap();
    }

    #[test]
    fn validate_passes_and_detects_fault() {
        let cfg = tiny();
        let rep = run_validate(&cfg).unwrap();
        assert!(rep.passed(), "{}", rep.render());
        let mut bad = ExperimentConfig::from_toml_str("validate.instances = 8\nvalidate.solver_tol = 1e-2").unwrap();
        bad.algorithms = vec![Algorithm::Alg1];
        let rep = run_validate(&bad).unwrap();
        let rec = rep.checks.iter().find(|c| c.name == "recovery_soundness").unwrap();
        assert!(!rec.passed(), "{}", rep.render());
        assert!(rec.failures[0].contains("seed"));
    }
}
