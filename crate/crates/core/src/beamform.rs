//! Problem construction for joint beamforming under a given energy-terminal
//! group division, plus the power, harvest and free-charge range formulas.
//!
//! Public quantities are in watts. The SDP itself is assembled in milliwatts
//! so that the noise floor, harvest floors and green budgets stay within a
//! few orders of magnitude of each other.

use nalgebra::{DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::sdp::{self, Constraint, LinearForm, SdpProblem, SdpSolution, Sense, SolverOptions};
use crate::seeds;
use crate::topology::{clamp_distance, ChannelRealization, CMatrix, Complex64, NetworkTopology};

pub const MW_PER_W: f64 = 1e3;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w * 1e3).log10()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Linear SINR floor shared by all ITs.
    pub sinr_min: f64,
    /// Harvest floor of an MET (W).
    pub p_amin: f64,
    /// Harvest floor of an FET (W).
    pub p_fmin: f64,
    pub eta: f64,
    pub alpha_abs: f64,
    /// Green energy per RRH (W).
    pub p_en: Vec<f64>,
    pub beta: f64,
    pub gamma: f64,
    /// Receiver noise per IT (W).
    pub noise_power: Vec<f64>,
}

impl SystemParams {
    /// Reference setting for 3 RRHs: green energy 2 / 2.5 / 3 W,
    /// FET/MET floors -20 / -17 dBm, path-loss exponent 2.5, 80% harvesting
    /// efficiency and unit weights. Noise defaults to 1e-7 W. Green energy
    /// repeats cyclically when `n_rrh != 3`.
    ///
    /// The SINR floor is 2 (about 3 dB). A floor of 20 with four ITs on three
    /// single-antenna RRHs fails [`sinr_targets_admissible`] for every channel.
    pub fn reference_defaults(n_rrh: usize, n_it: usize) -> Self {
        let pattern = [2.0, 2.5, 3.0];
        Self {
            sinr_min: 2.0,
            p_amin: dbm_to_watts(-17.0),
            p_fmin: dbm_to_watts(-20.0),
            eta: 0.8,
            alpha_abs: 2.5,
            p_en: (0..n_rrh).map(|n| pattern[n % 3]).collect(),
            beta: 1.0,
            gamma: 1.0,
            noise_power: vec![1e-7; n_it],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.sinr_min, self.p_amin, self.p_fmin, self.eta, self.alpha_abs, self.beta, self.gamma]
            .iter()
            .chain(&self.p_en)
            .chain(&self.noise_power)
            .all(|v| v.is_finite());
        if !finite {
            return Err(param("system parameters must be finite"));
        }
        if self.sinr_min <= 0.0 {
            return Err(param("sinr_min must be positive"));
        }
        if self.p_fmin <= 0.0 || self.p_amin <= 0.0 {
            return Err(param("harvest floors must be positive"));
        }
        if self.p_fmin > self.p_amin {
            return Err(param("p_fmin must not exceed p_amin"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(param("eta must lie in (0, 1]"));
        }
        if self.alpha_abs <= 0.0 {
            return Err(param("alpha_abs must be positive"));
        }
        if self.beta <= 0.0 || self.gamma <= 0.0 {
            return Err(param("beta and gamma must both be positive"));
        }
        if self.p_en.iter().any(|&p| p < 0.0) {
            return Err(param("green energy must be nonnegative"));
        }
        if self.noise_power.iter().any(|&p| p < 0.0) {
            return Err(param("noise power must be nonnegative"));
        }
        Ok(())
    }

    pub fn check_topology(&self, topo: &NetworkTopology) -> Result<()> {
        if self.p_en.len() != topo.n_rrh() {
            return Err(param(format!(
                "p_en has {} entries for {} RRHs",
                self.p_en.len(),
                topo.n_rrh()
            )));
        }
        if self.noise_power.len() != topo.n_it() {
            return Err(param(format!(
                "noise_power has {} entries for {} ITs",
                self.noise_power.len(),
                topo.n_it()
            )));
        }
        Ok(())
    }
}

/// Partition of the ETs into free-charge (FET) and MIMO (MET) terminals.
///
/// Stored as one flag per ET, so the two sets are disjoint and cover every
/// ET by construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupDivision {
    is_fet: Vec<bool>,
}

impl GroupDivision {
    pub fn all_met(n_et: usize) -> Self {
        Self { is_fet: vec![false; n_et] }
    }

    pub fn all_fet(n_et: usize) -> Self {
        Self { is_fet: vec![true; n_et] }
    }

    pub fn from_flags(is_fet: Vec<bool>) -> Self {
        Self { is_fet }
    }

    /// Bit `i` set means ET `i` is an FET.
    pub fn from_bitmask(mask: u64, n_et: usize) -> Self {
        Self {
            is_fet: (0..n_et).map(|i| mask >> i & 1 == 1).collect(),
        }
    }

    pub fn from_sets(met: &[usize], fet: &[usize], n_et: usize) -> Result<Self> {
        let mut seen = vec![None; n_et];
        for (&i, flag) in met.iter().map(|i| (i, false)).chain(fet.iter().map(|i| (i, true))) {
            let slot = seen
                .get_mut(i)
                .ok_or_else(|| param(format!("ET index {i} out of range")))?;
            if slot.is_some() {
                return Err(param(format!("ET {i} appears twice in the division")));
            }
            *slot = Some(flag);
        }
        let is_fet = seen
            .into_iter()
            .enumerate()
            .map(|(i, f)| f.ok_or_else(|| param(format!("ET {i} missing from the division"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { is_fet })
    }

    pub fn n_et(&self) -> usize {
        self.is_fet.len()
    }

    pub fn is_fet(&self, et: usize) -> bool {
        self.is_fet[et]
    }

    pub fn set_fet(&mut self, et: usize, fet: bool) {
        self.is_fet[et] = fet;
    }

    pub fn flags(&self) -> &[bool] {
        &self.is_fet
    }

    pub fn met_set(&self) -> Vec<usize> {
        (0..self.n_et()).filter(|&i| !self.is_fet[i]).collect()
    }

    pub fn fet_set(&self) -> Vec<usize> {
        (0..self.n_et()).filter(|&i| self.is_fet[i]).collect()
    }

    pub fn bitmask(&self) -> u64 {
        self.is_fet
            .iter()
            .enumerate()
            .filter(|(_, f)| **f)
            .fold(0u64, |m, (i, _)| m | 1 << i)
    }

    /// Fixed-width binary string, ET 0 first.
    pub fn bitstring(&self) -> String {
        self.is_fet.iter().map(|&f| if f { '1' } else { '0' }).collect()
    }
}

/// Column `i` is the joint beamformer towards IT `i`, in sqrt(W).
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub omega: CMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    /// Operational power per RRH (W).
    pub p_op: Vec<f64>,
    /// Purchased power per RRH (W), `max(0, p_op - p_en)`.
    pub p_pu: Vec<f64>,
    /// Free-charge range per RRH (m).
    pub ranges: Vec<f64>,
    /// `beta * sum(p_pu) + gamma * sum(p_op)` (W).
    pub objective: f64,
    pub feasible: bool,
}

impl PowerReport {
    pub fn from_p_op(p_op: Vec<f64>, params: &SystemParams, feasible: bool) -> Self {
        let p_pu: Vec<f64> = p_op
            .iter()
            .zip(&params.p_en)
            .map(|(op, en)| (op - en).max(0.0))
            .collect();
        let ranges = p_op.iter().map(|&p| free_charge_range(p, params)).collect();
        let objective = params.beta * p_pu.iter().sum::<f64>() + params.gamma * p_op.iter().sum::<f64>();
        Self {
            p_op,
            p_pu,
            ranges,
            objective,
            feasible,
        }
    }

    pub fn p_op_total(&self) -> f64 {
        self.p_op.iter().sum()
    }

    pub fn p_pu_total(&self) -> f64 {
        self.p_pu.iter().sum()
    }
}

/// Average FET harvest from its assigned RRH: `eta * p_op * d^-alpha`.
pub fn fet_harvest(p_op_assigned: f64, distance: f64, params: &SystemParams) -> f64 {
    params.eta * p_op_assigned * clamp_distance(distance).powf(-params.alpha_abs)
}

/// Distance up to which `p_op` alone meets the FET floor; 0 when not even a
/// terminal at the minimum distance would be served.
pub fn free_charge_range(p_op: f64, params: &SystemParams) -> f64 {
    let ratio = params.eta * p_op / params.p_fmin;
    if ratio >= 1.0 {
        ratio.powf(1.0 / params.alpha_abs)
    } else {
        0.0
    }
}

/// Necessary condition for a common SINR floor to be reachable by any
/// transmit covariances: `n_it * s / (1 + s) < n_rrh`.
pub fn sinr_targets_admissible(n_rrh: usize, n_it: usize, sinr_min: f64) -> bool {
    (n_it as f64) * sinr_min / (1.0 + sinr_min) < n_rrh as f64
}

/// Free-charge range supported by each RRH's green energy alone.
pub fn initial_green_range(params: &SystemParams) -> Vec<f64> {
    params
        .p_en
        .iter()
        .map(|&p| free_charge_range(p, params))
        .collect()
}

fn outer(h: &DVector<Complex64>) -> CMatrix {
    h * h.adjoint()
}

fn selector(n: usize, k: usize) -> CMatrix {
    let mut d = CMatrix::zeros(n, n);
    d[(k, k)] = Complex64::new(1.0, 0.0);
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Sinr(usize),
    MetHarvest(usize),
    FetHarvest(usize),
    PowerBalance(usize),
}

/// FET served by its nearest RRH at a clamped distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FetLink {
    pub et: usize,
    pub rrh: usize,
    pub distance: f64,
}

/// A built optimization instance together with the data needed to evaluate
/// beamformers against its constraints. Holds channels of ITs and METs only.
#[derive(Debug, Clone)]
pub struct BeamformingSdp {
    pub problem: SdpProblem,
    pub rows: Vec<RowKind>,
    pub division: GroupDivision,
    pub params: SystemParams,
    pub h_id: CMatrix,
    pub met_channels: Vec<(usize, DVector<Complex64>)>,
    pub fet_links: Vec<FetLink>,
}

impl BeamformingSdp {
    pub fn n_rrh(&self) -> usize {
        self.h_id.nrows()
    }

    pub fn n_it(&self) -> usize {
        self.h_id.ncols()
    }
}

pub fn build_sdp(
    topology: &NetworkTopology,
    channels: &ChannelRealization,
    division: &GroupDivision,
    params: &SystemParams,
) -> Result<BeamformingSdp> {
    params.check_topology(topology)?;
    let n = topology.n_rrh();
    let u_d = topology.n_it();
    if division.n_et() != topology.n_et() {
        return Err(Error::Contract(format!(
            "division covers {} ETs, topology has {}",
            division.n_et(),
            topology.n_et()
        )));
    }
    if channels.h_id.shape() != (n, u_d) {
        return Err(Error::Contract("IT channel matrix has wrong shape".into()));
    }
    let met = division.met_set();
    if met.iter().any(|&j| j >= channels.h_et.ncols()) || channels.h_et.nrows() != n && !met.is_empty() {
        return Err(Error::Contract("missing channel column for an MET".into()));
    }

    let mw = |w: f64| w * MW_PER_W;
    let real = |v: f64| Complex64::new(v, 0.0);
    let mut constraints = Vec::new();
    let mut rows = Vec::new();

    let it_h: Vec<CMatrix> = (0..u_d).map(|i| outer(&channels.it_channel(i))).collect();
    for i in 0..u_d {
        let mut form = LinearForm::new();
        for j in 0..u_d {
            let coeff = if i == j {
                &it_h[i] * real(1.0 / params.sinr_min)
            } else {
                -&it_h[i]
            };
            form = form.block(j, coeff);
        }
        constraints.push(Constraint::new(form, Sense::Ge, mw(params.noise_power[i])));
        rows.push(RowKind::Sinr(i));
    }

    let met_channels: Vec<(usize, DVector<Complex64>)> =
        met.iter().map(|&j| (j, channels.et_channel(j))).collect();
    for (j, h) in &met_channels {
        let coeff = outer(h) * real(params.eta);
        let form = (0..u_d).fold(LinearForm::new(), |f, i| f.block(i, coeff.clone()));
        constraints.push(Constraint::new(form, Sense::Ge, mw(params.p_amin)));
        rows.push(RowKind::MetHarvest(*j));
    }

    let fet_links: Vec<FetLink> = division
        .fet_set()
        .into_iter()
        .map(|et| {
            let (rrh, d) = topology.assigned_rrh(et);
            FetLink {
                et,
                rrh,
                distance: clamp_distance(d),
            }
        })
        .collect();
    for link in &fet_links {
        let gain = params.eta * link.distance.powf(-params.alpha_abs);
        let coeff = selector(n, link.rrh) * real(gain);
        let form = (0..u_d).fold(LinearForm::new(), |f, i| f.block(i, coeff.clone()));
        constraints.push(Constraint::new(form, Sense::Ge, mw(params.p_fmin)));
        rows.push(RowKind::FetHarvest(link.et));
    }

    for k in 0..n {
        let form = (0..u_d)
            .fold(LinearForm::new(), |f, i| f.block(i, selector(n, k)))
            .scalar(k, -1.0);
        constraints.push(Constraint::new(form, Sense::Le, mw(params.p_en[k])));
        rows.push(RowKind::PowerBalance(k));
    }

    let objective = (0..u_d)
        .fold(LinearForm::new(), |f, i| f.block(i, CMatrix::identity(n, n) * real(params.gamma)));
    let objective = (0..n).fold(objective, |f, k| f.scalar(k, params.beta));

    Ok(BeamformingSdp {
        problem: SdpProblem {
            block_dims: vec![n; u_d],
            n_scalars: n,
            objective,
            constraints,
        },
        rows,
        division: division.clone(),
        params: params.clone(),
        h_id: channels.h_id.clone(),
        met_channels,
        fet_links,
    })
}

/// Per-RRH operational power (W) implied by the relaxed solution.
pub fn solution_p_op(solution: &SdpSolution, n_rrh: usize) -> Vec<f64> {
    (0..n_rrh)
        .map(|k| solution.block_values.iter().map(|w| w[(k, k)].re).sum::<f64>() / MW_PER_W)
        .collect()
}

/// Purchased power (W) as returned by the solver's scalar variables.
pub fn solution_p_pu(solution: &SdpSolution) -> Vec<f64> {
    solution.scalar_values.iter().map(|p| p / MW_PER_W).collect()
}

pub fn power_report(sdp: &BeamformingSdp, solution: &SdpSolution) -> PowerReport {
    PowerReport::from_p_op(
        solution_p_op(solution, sdp.n_rrh()),
        &sdp.params,
        solution.is_optimal(),
    )
}

pub fn beamformer_power_report(beamformers: &BeamformerSet, params: &SystemParams) -> PowerReport {
    let p_op = (0..beamformers.omega.nrows())
        .map(|k| beamformers.omega.row(k).iter().map(|w| w.norm_sqr()).sum())
        .collect();
    PowerReport::from_p_op(p_op, params, true)
}

pub fn compute_sinr(beamformers: &BeamformerSet, channels: &ChannelRealization, it: usize, params: &SystemParams) -> f64 {
    sinr_with(&channels.h_id, &beamformers.omega, it, params.noise_power[it])
}

fn sinr_with(h_id: &CMatrix, omega: &CMatrix, it: usize, noise: f64) -> f64 {
    let h = h_id.column(it);
    let gain = |j: usize| h.dotc(&omega.column(j)).norm_sqr();
    let interference: f64 = (0..omega.ncols()).filter(|&j| j != it).map(gain).sum();
    gain(it) / (noise + interference)
}

pub fn met_harvest(beamformers: &BeamformerSet, channels: &ChannelRealization, et: usize, params: &SystemParams) -> f64 {
    harvest_with(&channels.h_et.column(et).into_owned(), &beamformers.omega, params.eta)
}

fn harvest_with(h: &DVector<Complex64>, omega: &CMatrix, eta: f64) -> f64 {
    eta * (0..omega.ncols()).map(|j| h.dotc(&omega.column(j)).norm_sqr()).sum::<f64>()
}

// ---------------------------------------------------------------------------
// recovery

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryOptions {
    /// Maximum trace fraction outside the dominant eigenvalue.
    pub rank_tol: f64,
    pub candidates: usize,
    pub seed: u64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            rank_tol: 1e-4,
            candidates: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryPath {
    RankOne,
    Randomized,
}

#[derive(Debug, Clone)]
pub struct Recovery {
    pub beamformers: BeamformerSet,
    pub path: RecoveryPath,
    pub report: PowerReport,
    /// Relaxation lower bound (W): the dual objective of the solve.
    pub lower_bound: f64,
}

impl Recovery {
    pub fn inflation(&self) -> f64 {
        (self.report.objective - self.lower_bound) / self.lower_bound.abs().max(f64::MIN_POSITIVE)
    }
}

/// Constraint check of concrete beamformers against the original
/// (non-relaxed) requirements. Values are relative shortfalls.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityCheck {
    pub worst_sinr: f64,
    pub worst_met: f64,
    pub worst_fet: f64,
}

impl FeasibilityCheck {
    pub fn worst(&self) -> f64 {
        self.worst_sinr.max(self.worst_met).max(self.worst_fet)
    }
}

/// Relative shortfall of each requirement family for `beamformers`
/// (0 when satisfied). Power balance always holds since purchased power is
/// free to absorb any deficit.
pub fn check_beamformers(sdp: &BeamformingSdp, beamformers: &BeamformerSet) -> FeasibilityCheck {
    let p = &sdp.params;
    let omega = &beamformers.omega;
    let worst_sinr = (0..sdp.n_it())
        .map(|i| {
            let s = sinr_with(&sdp.h_id, omega, i, p.noise_power[i]);
            ((p.sinr_min - s) / p.sinr_min).max(0.0)
        })
        .fold(0.0, f64::max);
    let worst_met = sdp
        .met_channels
        .iter()
        .map(|(_, h)| ((p.p_amin - harvest_with(h, omega, p.eta)) / p.p_amin).max(0.0))
        .fold(0.0, f64::max);
    let p_op = beamformer_power_report(beamformers, p).p_op;
    let worst_fet = sdp
        .fet_links
        .iter()
        .map(|l| ((p.p_fmin - fet_harvest(p_op[l.rrh], l.distance, p)) / p.p_fmin).max(0.0))
        .fold(0.0, f64::max);
    FeasibilityCheck {
        worst_sinr,
        worst_met,
        worst_fet,
    }
}

/// Smallest common scale `c` for which `c * omega` meets every requirement,
/// or None when some SINR cannot be reached by scaling.
fn uniform_scale(sdp: &BeamformingSdp, omega: &CMatrix) -> Option<f64> {
    let p = &sdp.params;
    let mut c: f64 = 0.0;
    for i in 0..sdp.n_it() {
        let h = sdp.h_id.column(i);
        let sig = h.dotc(&omega.column(i)).norm_sqr();
        let intf: f64 = (0..omega.ncols())
            .filter(|&j| j != i)
            .map(|j| h.dotc(&omega.column(j)).norm_sqr())
            .sum();
        let margin = sig - p.sinr_min * intf;
        if margin <= 0.0 {
            return None;
        }
        c = c.max(p.sinr_min * p.noise_power[i] / margin);
    }
    for (_, h) in &sdp.met_channels {
        let e = harvest_with(h, omega, p.eta);
        if e <= 0.0 {
            return None;
        }
        c = c.max(p.p_amin / e);
    }
    for l in &sdp.fet_links {
        let p_op: f64 = omega.row(l.rrh).iter().map(|w| w.norm_sqr()).sum();
        let e = fet_harvest(p_op, l.distance, p);
        if e <= 0.0 {
            return None;
        }
        c = c.max(p.p_fmin / e);
    }
    (c > 0.0 && c.is_finite()).then_some(c)
}

/// Optimal per-beam powers for fixed directions `dirs` (sqrt(W) units).
fn power_control(sdp: &BeamformingSdp, dirs: &CMatrix, solver: &SolverOptions) -> Option<CMatrix> {
    let p = &sdp.params;
    let n = sdp.n_rrh();
    let u_d = sdp.n_it();
    let mw = |w: f64| w * MW_PER_W;
    let gain = |h: &DVector<Complex64>, j: usize| h.dotc(&dirs.column(j)).norm_sqr();
    // scalars 0..u_d are beam powers, u_d..u_d+n purchased power
    let mut constraints = Vec::new();
    for i in 0..u_d {
        let h = sdp.h_id.column(i).into_owned();
        let form = (0..u_d).fold(LinearForm::new(), |f, j| {
            let g = gain(&h, j);
            f.scalar(j, if i == j { g / p.sinr_min } else { -g })
        });
        constraints.push(Constraint::new(form, Sense::Ge, mw(p.noise_power[i])));
    }
    for (_, h) in &sdp.met_channels {
        let form = (0..u_d).fold(LinearForm::new(), |f, j| f.scalar(j, p.eta * gain(h, j)));
        constraints.push(Constraint::new(form, Sense::Ge, mw(p.p_amin)));
    }
    let row_power = |k: usize, j: usize| dirs[(k, j)].norm_sqr();
    for l in &sdp.fet_links {
        let g = p.eta * l.distance.powf(-p.alpha_abs);
        let form = (0..u_d).fold(LinearForm::new(), |f, j| f.scalar(j, g * row_power(l.rrh, j)));
        constraints.push(Constraint::new(form, Sense::Ge, mw(p.p_fmin)));
    }
    for k in 0..n {
        let form = (0..u_d)
            .fold(LinearForm::new(), |f, j| f.scalar(j, row_power(k, j)))
            .scalar(u_d + k, -1.0);
        constraints.push(Constraint::new(form, Sense::Le, mw(p.p_en[k])));
    }
    let objective = (0..u_d).fold(LinearForm::new(), |f, j| {
        f.scalar(j, p.gamma * dirs.column(j).norm_squared())
    });
    let objective = (0..n).fold(objective, |f, k| f.scalar(u_d + k, p.beta));
    let lp = SdpProblem {
        block_dims: vec![],
        n_scalars: u_d + n,
        objective,
        constraints,
    };
    let sol = sdp::solve(&lp, solver).ok()?;
    if !sol.is_optimal() {
        return None;
    }
    let mut omega = dirs.clone();
    for j in 0..u_d {
        let pw = (sol.scalar_values[j].max(0.0) / MW_PER_W).sqrt();
        omega.column_mut(j).scale_mut(pw);
    }
    Some(omega)
}

fn hermitian_eigen(w: &CMatrix) -> SymmetricEigen<Complex64, nalgebra::Dyn> {
    SymmetricEigen::new((w + w.adjoint()) * Complex64::new(0.5, 0.0))
}

/// Extracts beamformers from a relaxed solution.
///
/// When every block is rank one up to `rank_tol`, the dominant eigenvectors
/// are used and rescaled by the smallest common factor restoring
/// feasibility. Otherwise Gaussian randomization draws candidate directions
/// from each block's covariance and picks the cheapest after optimal
/// per-beam power control.
pub fn recover_beamformers(
    sdp: &BeamformingSdp,
    solution: &SdpSolution,
    options: &RecoveryOptions,
    solver: &SolverOptions,
) -> Result<Recovery> {
    if !solution.is_optimal() {
        return Err(Error::Contract("recovery needs an optimal solution".into()));
    }
    let n = sdp.n_rrh();
    let u_d = sdp.n_it();
    let lower_bound = solution.dual_objective / MW_PER_W;
    let eigs: Vec<_> = solution.block_values.iter().map(hermitian_eigen).collect();
    let sqrt_mw = MW_PER_W.sqrt();

    let mut dominant = CMatrix::zeros(n, u_d);
    let mut rank_one = true;
    for (i, (e, w)) in eigs.iter().zip(&solution.block_values).enumerate() {
        let trace: f64 = (0..n).map(|k| w[(k, k)].re).sum();
        let (imax, lmax) = e
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |a, (k, l)| if l > a.1 { (k, l) } else { a });
        if trace <= 1e-12 * (1.0 + solution.objective_value.abs()) {
            continue;
        }
        if lmax < (1.0 - options.rank_tol) * trace {
            rank_one = false;
        }
        let v = e.eigenvectors.column(imax) * Complex64::new(lmax.max(0.0).sqrt() / sqrt_mw, 0.0);
        dominant.set_column(i, &v);
    }

    let finish = |omega: CMatrix, path: RecoveryPath| {
        let beamformers = BeamformerSet { omega };
        let report = beamformer_power_report(&beamformers, &sdp.params);
        Recovery {
            beamformers,
            path,
            report,
            lower_bound,
        }
    };

    if rank_one {
        if let Some(c) = uniform_scale(sdp, &dominant) {
            return Ok(finish(dominant * Complex64::new(c.sqrt(), 0.0), RecoveryPath::RankOne));
        }
    }

    // Gaussian randomization
    let mut rng = seeds::rng(options.seed, seeds::DOMAIN_RECOVERY, 0);
    let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("normal");
    let factors: Vec<CMatrix> = eigs
        .iter()
        .map(|e| {
            let sq = e.eigenvalues.map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0));
            &e.eigenvectors * CMatrix::from_diagonal(&sq)
        })
        .collect();
    let mut best: Option<(f64, CMatrix)> = None;
    let consider = |dirs: CMatrix, best: &mut Option<(f64, CMatrix)>| {
        if let Some(omega) = power_control(sdp, &dirs, solver) {
            let obj = beamformer_power_report(&BeamformerSet { omega: omega.clone() }, &sdp.params).objective;
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                *best = Some((obj, omega));
            }
        }
    };
    consider(dominant.clone(), &mut best);
    for _ in 0..options.candidates {
        let mut dirs = CMatrix::zeros(n, u_d);
        for (i, f) in factors.iter().enumerate() {
            let r = DVector::from_fn(n, |_, _| Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)));
            let mut col = f * r;
            let norm = col.norm();
            if norm > 0.0 {
                col /= Complex64::new(norm, 0.0);
            } else {
                let k = rng.random_range(0..n);
                col[k] = Complex64::new(1.0, 0.0);
            }
            dirs.set_column(i, &col);
        }
        consider(dirs, &mut best);
    }
    match best {
        Some((_, omega)) => Ok(finish(omega, RecoveryPath::Randomized)),
        None => Err(Error::RecoveryFailed(format!(
            "no feasible candidate among {} randomized draws",
            options.candidates
        ))),
    }
}

/// Builds and solves the instance for `division`.
pub fn solve_division(
    topology: &NetworkTopology,
    channels: &ChannelRealization,
    division: &GroupDivision,
    params: &SystemParams,
    solver: &SolverOptions,
) -> Result<(BeamformingSdp, SdpSolution)> {
    let sdp = build_sdp(topology, channels, division, params)?;
    let sol = sdp::solve(&sdp.problem, solver)?;
    Ok((sdp, sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{draw_channels, generate_topology, Position};
    use crate::sdp::Status;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn single_cell() -> NetworkTopology {
        NetworkTopology {
            rrh_positions: vec![Position::new(0.0, 0.0)],
            it_positions: vec![Position::new(1.0, 0.0)],
            et_positions: vec![],
            hex_side: 20.0,
        }
    }

    fn single_it_params() -> SystemParams {
        let mut p = SystemParams::reference_defaults(1, 1);
        p.sinr_min = 20.0;
        p.noise_power = vec![1.0];
        p.p_en = vec![0.0];
        p
    }

    #[test]
    fn reference_defaults_validate() {
        let p = SystemParams::reference_defaults(3, 4);
        p.validate().unwrap();
        assert!((p.p_amin - 10f64.powf(-1.7) * 1e-3).abs() < 1e-18);
        assert!((p.p_fmin - 1e-5).abs() < 1e-18);
        assert_eq!(p.p_en, vec![2.0, 2.5, 3.0]);
    }

    #[test]
    fn params_invariants() {
        let good = SystemParams::reference_defaults(3, 4);
        let mut p = good.clone();
        p.p_fmin = p.p_amin * 1.01;
        assert!(p.validate().is_err());
        let mut p = good.clone();
        p.beta = 0.0;
        assert!(p.validate().is_err());
        let mut p = good.clone();
        p.eta = 1.5;
        assert!(p.validate().is_err());
        let mut p = good;
        p.p_en[1] = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn division_sets_and_bitmask() {
        let d = GroupDivision::from_sets(&[0, 2], &[1, 3], 4).unwrap();
        assert_eq!(d.met_set(), vec![0, 2]);
        assert_eq!(d.fet_set(), vec![1, 3]);
        assert_eq!(d.bitmask(), 0b1010);
        assert_eq!(GroupDivision::from_bitmask(0b1010, 4), d);
        assert_eq!(d.bitstring(), "0101");
        assert!(GroupDivision::from_sets(&[0, 1], &[1], 2).is_err());
        assert!(GroupDivision::from_sets(&[0], &[], 2).is_err());
        assert!(GroupDivision::from_sets(&[5], &[], 2).is_err());
    }

    #[test]
    fn range_examples() {
        let p = SystemParams::reference_defaults(3, 4);
        // (0.8 * 1 / 1e-5)^(1/2.5) = 80000^0.4
        let r = free_charge_range(1.0, &p);
        assert!((r - 91.461_010_385).abs() < 1e-6, "{r}");
        assert_eq!(free_charge_range(0.0, &p), 0.0);
        assert!(free_charge_range(2.0, &p) > r);
        let g = initial_green_range(&p);
        assert!((g[0] - 120.683_526_731).abs() < 1e-6, "{g:?}");
        assert!(g[0] < g[1] && g[1] < g[2]);
        let mut p0 = p.clone();
        p0.p_en[0] = 0.0;
        assert_eq!(initial_green_range(&p0)[0], 0.0);
    }

    #[test]
    fn harvest_examples() {
        let p = SystemParams::reference_defaults(3, 4);
        assert!((fet_harvest(1.0, 1.0, &p) - 0.8).abs() < 1e-15);
        let r = free_charge_range(1.0, &p);
        assert!((fet_harvest(1.0, r, &p) - p.p_fmin).abs() < 1e-9 * p.p_fmin);
        let ratio = fet_harvest(1.0, 20.0, &p) / fet_harvest(1.0, 10.0, &p);
        assert!((ratio - 2f64.powf(-2.5)).abs() < 1e-12);
        // colocated terminal clamps to 1 m
        assert_eq!(fet_harvest(1.0, 0.0, &p), fet_harvest(1.0, 1.0, &p));
    }

    #[test]
    fn sinr_examples() {
        let params = SystemParams {
            noise_power: vec![1.0, 1.0],
            ..SystemParams::reference_defaults(3, 2)
        };
        let mut h_id = CMatrix::zeros(3, 2);
        h_id[(0, 0)] = c(1.0);
        let ch = ChannelRealization {
            h_id,
            h_et: CMatrix::zeros(3, 0),
        };
        let mut omega = CMatrix::zeros(3, 2);
        omega[(0, 0)] = c(2.0);
        let bf = BeamformerSet { omega: omega.clone() };
        assert!((compute_sinr(&bf, &ch, 0, &params) - 4.0).abs() < 1e-12);
        omega[(0, 1)] = c(1.0);
        let bf = BeamformerSet { omega };
        assert!((compute_sinr(&bf, &ch, 0, &params) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn met_harvest_examples() {
        let params = SystemParams::reference_defaults(2, 2);
        let mut h_et = CMatrix::zeros(2, 1);
        h_et[(0, 0)] = c(1.0);
        let ch = ChannelRealization {
            h_id: CMatrix::zeros(2, 2),
            h_et,
        };
        let mut omega = CMatrix::zeros(2, 2);
        omega[(0, 0)] = c(1.0);
        let one = met_harvest(&BeamformerSet { omega: omega.clone() }, &ch, 0, &params);
        assert!((one - 0.8).abs() < 1e-15);
        omega[(0, 1)] = Complex64::new(0.0, 0.5);
        let two = met_harvest(&BeamformerSet { omega }, &ch, 0, &params);
        assert!((two - 0.8 * 1.25).abs() < 1e-15);
    }

    #[test]
    fn power_report_clamps_purchase() {
        let mut p = SystemParams::reference_defaults(2, 1);
        p.p_en = vec![2.5, 2.0];
        let r = PowerReport::from_p_op(vec![3.0, 1.0], &p, true);
        assert!((r.p_pu[0] - 0.5).abs() < 1e-15);
        assert_eq!(r.p_pu[1], 0.0);
        assert!((r.objective - 4.5).abs() < 1e-15);
    }

    #[test]
    fn single_it_closed_form() {
        let topo = single_cell();
        let params = single_it_params();
        let ch = ChannelRealization {
            h_id: CMatrix::from_element(1, 1, c(1.0)),
            h_et: CMatrix::zeros(1, 0),
        };
        let (sdp, sol) = solve_division(&topo, &ch, &GroupDivision::all_met(0), &params, &SolverOptions::default()).unwrap();
        assert!(sol.is_optimal());
        // tr(W) = SINR_min * sigma^2 / |h|^2 = 20 W
        let rep = power_report(&sdp, &sol);
        assert!((rep.p_op_total() - 20.0).abs() < 20.0 * 1e-6, "{rep:?}");
        let rec = recover_beamformers(&sdp, &sol, &RecoveryOptions::default(), &SolverOptions::default()).unwrap();
        assert_eq!(rec.path, RecoveryPath::RankOne);
        let s = compute_sinr(&rec.beamformers, &ch, 0, &params);
        assert!((s - 20.0).abs() <= 20.0 * 1e-6, "{s}");
    }

    #[test]
    fn structure_counts() {
        let topo = generate_topology(7, 3, 4, 7, 20.0).unwrap();
        let params = SystemParams::reference_defaults(3, 4);
        let ch = draw_channels(&topo, 7, 0, 2.5).unwrap();
        let div = GroupDivision::from_bitmask(0b0010110, 7);
        let sdp = build_sdp(&topo, &ch, &div, &params).unwrap();
        assert_eq!(sdp.problem.block_dims, vec![3; 4]);
        assert_eq!(sdp.problem.n_scalars, 3);
        assert_eq!(sdp.problem.constraints.len(), 4 + 4 + 3 + 3);
        let empty_met = build_sdp(&topo, &ch, &GroupDivision::all_fet(7), &params).unwrap();
        assert!(!empty_met.rows.iter().any(|r| matches!(r, RowKind::MetHarvest(_))));
        assert_eq!(empty_met.problem.constraints.len(), 4 + 7 + 3);
    }

    #[test]
    fn missing_met_channel_is_contract_error() {
        let topo = generate_topology(7, 3, 4, 2, 20.0).unwrap();
        let params = SystemParams::reference_defaults(3, 4);
        let mut ch = draw_channels(&topo, 7, 0, 2.5).unwrap();
        ch.h_et = CMatrix::zeros(3, 1);
        let err = build_sdp(&topo, &ch, &GroupDivision::all_met(2), &params).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn fet_columns_are_never_read() {
        let topo = generate_topology(3, 3, 4, 7, 20.0).unwrap();
        let params = SystemParams::reference_defaults(3, 4);
        let ch = draw_channels(&topo, 3, 0, 2.5).unwrap();
        let div = GroupDivision::from_bitmask(0b1011001, 7);
        let mut poisoned = ch.clone();
        for et in div.fet_set() {
            poisoned.h_et.column_mut(et).fill(Complex64::new(f64::NAN, f64::NAN));
        }
        let a = build_sdp(&topo, &ch, &div, &params).unwrap();
        let b = build_sdp(&topo, &poisoned, &div, &params).unwrap();
        assert_eq!(a.problem, b.problem);
    }

    #[test]
    fn rank_one_matrix_recovers_channel_direction() {
        let topo = single_cell();
        let params = single_it_params();
        let h = CMatrix::from_element(1, 1, Complex64::new(0.6, 0.8));
        let ch = ChannelRealization {
            h_id: h,
            h_et: CMatrix::zeros(1, 0),
        };
        let (sdp, sol) = solve_division(&topo, &ch, &GroupDivision::all_met(0), &params, &SolverOptions::default()).unwrap();
        let rec = recover_beamformers(&sdp, &sol, &RecoveryOptions::default(), &SolverOptions::default()).unwrap();
        let w = rec.beamformers.omega[(0, 0)];
        assert!((w.norm_sqr() - sol.block_values[0][(0, 0)].re / MW_PER_W).abs() < 1e-6);
    }

    #[test]
    fn sinr_bound_predicts_relaxation_infeasibility() {
        assert!(!sinr_targets_admissible(3, 4, 20.0));
        assert!(!sinr_targets_admissible(3, 4, 3.0));
        assert!(sinr_targets_admissible(3, 4, 2.99));
        assert!(sinr_targets_admissible(3, 3, 1e6));
        let mut params = SystemParams::reference_defaults(3, 4);
        params.sinr_min = 20.0;
        for seed in 0..4 {
            let topo = generate_topology(seed, 3, 4, 7, 20.0).unwrap();
            let ch = draw_channels(&topo, seed, 0, 2.5).unwrap();
            let (_, sol) =
                solve_division(&topo, &ch, &GroupDivision::all_met(7), &params, &SolverOptions::default()).unwrap();
            assert!(!sol.is_optimal(), "seed {seed}");
            assert_ne!(sol.status, Status::Unbounded, "seed {seed}: {}", sol.diagnostics);
        }
    }

    #[test]
    fn default_scale_relaxation_and_recovery() {
        let params = SystemParams::reference_defaults(3, 4);
        for seed in 0..5 {
            let topo = generate_topology(seed, 3, 4, 7, 20.0).unwrap();
            let ch = draw_channels(&topo, seed, 0, 2.5).unwrap();
            let div = GroupDivision::from_bitmask(0b1100101 ^ seed, 7);
            let (sdp, sol) = solve_division(&topo, &ch, &div, &params, &SolverOptions::default()).unwrap();
            assert!(sol.is_optimal(), "seed {seed}: {}", sol.diagnostics);
            let v = sdp::verify(&sdp.problem, &sol, 1e-7).unwrap();
            assert!(v.max_violation <= 1e-7, "seed {seed}: {v:?}");
            // no slack in purchased power
            let rep = power_report(&sdp, &sol);
            for (a, b) in solution_p_pu(&sol).iter().zip(&rep.p_pu) {
                assert!((a - b).abs() <= 1e-7);
            }
            assert!((rep.objective - sol.objective_value / MW_PER_W).abs() <= 1e-7);
            let rec = recover_beamformers(&sdp, &sol, &RecoveryOptions::default(), &SolverOptions::default()).unwrap();
            let chk = check_beamformers(&sdp, &rec.beamformers);
            assert!(chk.worst() <= 1e-5, "seed {seed}: {chk:?}");
            for et in div.met_set() {
                assert!(met_harvest(&rec.beamformers, &ch, et, &params) >= params.p_amin * (1.0 - 1e-5));
            }
            if rec.path == RecoveryPath::RankOne {
                assert!(rec.inflation() <= 1e-4, "seed {seed}: {}", rec.inflation());
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn range_harvest_inversion(p_op in 1e-4f64..1e3, alpha in 1.5f64..4.0, eta in 0.1f64..1.0) {
            let mut p = SystemParams::reference_defaults(1, 1);
            p.alpha_abs = alpha;
            p.eta = eta;
            let r = free_charge_range(p_op, &p);
            if r > 0.0 {
                let e = fet_harvest(p_op, r, &p);
                prop_assert!((e - p.p_fmin).abs() <= 1e-9 * p.p_fmin);
            } else {
                prop_assert!(eta * p_op < p.p_fmin);
            }
        }

        #[test]
        fn dbm_roundtrip(dbm in -60.0f64..40.0) {
            prop_assert!((watts_to_dbm(dbm_to_watts(dbm)) - dbm).abs() < 1e-9);
        }
    }
}
