//! ET group division: the range-based updating process, the two iterative
//! algorithms, and the exhaustive and fixed comparison divisions.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamform::{initial_green_range, power_report, solve_division, GroupDivision, PowerReport, SystemParams};
use crate::error::{param, Error, Result};
use crate::sdp::SolverOptions;
use crate::topology::{clamp_distance, ChannelRealization, NetworkTopology};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivisionOptions {
    /// An MET whose gain to its assigned RRH is below this fraction of the
    /// path-loss gain is moved to the FET set by the channel check.
    pub poor_channel_factor: f64,
    /// Relative half-width of the band around a range treated as boundary.
    pub boundary_band: f64,
    pub max_division_iters: usize,
    pub brute_force_cap: usize,
    pub solver: SolverOptions,
}

impl Default for DivisionOptions {
    fn default() -> Self {
        Self {
            poor_channel_factor: 0.05,
            boundary_band: 0.05,
            max_division_iters: 50,
            brute_force_cap: 12,
            solver: SolverOptions::default(),
        }
    }
}

impl DivisionOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.poor_channel_factor >= 0.0 && self.poor_channel_factor.is_finite()) {
            return Err(param("poor_channel_factor must be finite and non-negative"));
        }
        if !(self.boundary_band >= 0.0 && self.boundary_band.is_finite()) {
            return Err(param("boundary_band must be finite and non-negative"));
        }
        if self.max_division_iters == 0 {
            return Err(param("max_division_iters must be at least 1"));
        }
        if self.brute_force_cap > 24 {
            return Err(param("brute_force_cap above 24 is not supported"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    FixedPoint,
    CycleBroken,
    Infeasible,
    IterationCap,
    /// Non-iterative run (fixed baseline or exhaustive search).
    Direct,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::FixedPoint => "fixed_point",
            Termination::CycleBroken => "cycle_broken",
            Termination::Infeasible => "infeasible",
            Termination::IterationCap => "iteration_cap",
            Termination::Direct => "direct",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub division: GroupDivision,
    pub bitmask: u64,
    /// Objective (W) of the relaxation under `division`; `None` if infeasible.
    pub objective: Option<f64>,
}

impl HistoryEntry {
    fn new(division: GroupDivision, objective: Option<f64>) -> Self {
        let bitmask = division.bitmask();
        Self {
            division,
            bitmask,
            objective,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivisionRunResult {
    pub initial_division: GroupDivision,
    pub final_division: GroupDivision,
    /// Report of the final division; `None` when no feasible division was found.
    pub report: Option<PowerReport>,
    /// Number of update rounds (or divisions evaluated, for direct runs).
    pub iterations: usize,
    pub history: Vec<HistoryEntry>,
    pub termination: Termination,
    /// Boundary ETs for which both assignments were infeasible.
    pub boundary_unresolved: Vec<usize>,
    /// Distinct SDP solves performed.
    pub solves: usize,
}

impl DivisionRunResult {
    pub fn objective(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.objective)
    }

    pub fn is_feasible(&self) -> bool {
        self.report.is_some()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run result serializes")
    }
}

/// Solves divisions for one slot, memoizing by division.
struct Evaluator<'a> {
    topology: &'a NetworkTopology,
    channels: &'a ChannelRealization,
    params: &'a SystemParams,
    options: &'a DivisionOptions,
    cache: HashMap<GroupDivision, Option<PowerReport>>,
    unresolved: Vec<usize>,
}

impl<'a> Evaluator<'a> {
    fn new(
        topology: &'a NetworkTopology,
        channels: &'a ChannelRealization,
        params: &'a SystemParams,
        options: &'a DivisionOptions,
    ) -> Result<Self> {
        params.validate()?;
        params.check_topology(topology)?;
        channels.check_dims(topology)?;
        options.validate()?;
        Ok(Self {
            topology,
            channels,
            params,
            options,
            cache: HashMap::new(),
            unresolved: Vec::new(),
        })
    }

    fn report(&mut self, division: &GroupDivision) -> Result<Option<PowerReport>> {
        if let Some(r) = self.cache.get(division) {
            return Ok(r.clone());
        }
        let r = evaluate(self.topology, self.channels, division, self.params, &self.options.solver)?;
        self.cache.insert(division.clone(), r.clone());
        Ok(r)
    }

    fn objective(&mut self, division: &GroupDivision) -> Result<Option<f64>> {
        Ok(self.report(division)?.map(|r| r.objective))
    }

    fn boundary_refine(&mut self, mut division: GroupDivision, ranges: &[f64]) -> Result<GroupDivision> {
        let band = self.options.boundary_band;
        for et in boundary_terminals(self.topology, ranges, band) {
            let mut as_fet = division.clone();
            as_fet.set_fet(et, true);
            let mut as_met = division.clone();
            as_met.set_fet(et, false);
            let f = self.objective(&as_fet)?;
            let m = self.objective(&as_met)?;
            division = match (f, m) {
                (Some(f), Some(m)) if f <= m => as_fet,
                (Some(_), Some(_)) | (None, Some(_)) => as_met,
                (Some(_), None) => as_fet,
                (None, None) => {
                    self.unresolved.push(et);
                    division
                }
            };
        }
        Ok(division)
    }

    /// One updating round; `None` when `prev` itself is infeasible.
    fn update(&mut self, prev: &GroupDivision) -> Result<Option<(GroupDivision, PowerReport)>> {
        let Some(report) = self.report(prev)? else {
            return Ok(None);
        };
        let classified = classify_by_range(self.topology, &report.ranges);
        let next = self.boundary_refine(classified, &report.ranges)?;
        Ok(Some((next, report)))
    }

    fn iterate(&mut self, initial: GroupDivision) -> Result<DivisionRunResult> {
        let start = channel_check(
            self.topology,
            self.channels,
            &initial,
            self.params,
            self.options.poor_channel_factor,
        );
        let max = self.options.max_division_iters;
        let mut run = drive(start, max, |d| self.update(d))?;
        run.initial_division = initial;
        run.boundary_unresolved = std::mem::take(&mut self.unresolved);
        run.solves = self.cache.len();
        Ok(run)
    }
}

fn evaluate(
    topology: &NetworkTopology,
    channels: &ChannelRealization,
    division: &GroupDivision,
    params: &SystemParams,
    solver: &SolverOptions,
) -> Result<Option<PowerReport>> {
    let (sdp, sol) = solve_division(topology, channels, division, params, solver)?;
    Ok(sol.is_optimal().then(|| power_report(&sdp, &sol)))
}

/// Runs the updating loop from `start` until a fixed point, a repeat of an
/// earlier division, an infeasible round or the round cap.
///
/// `step` returns the next division together with the report of its argument,
/// or `None` when the argument is infeasible.
fn drive<F>(start: GroupDivision, max_iters: usize, mut step: F) -> Result<DivisionRunResult>
where
    F: FnMut(&GroupDivision) -> Result<Option<(GroupDivision, PowerReport)>>,
{
    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut reports: Vec<PowerReport> = Vec::new();
    let mut current = start.clone();
    let finish = |history: Vec<HistoryEntry>, fin: Option<(GroupDivision, PowerReport)>, termination, iterations| {
        let (final_division, report) = match fin {
            Some((d, r)) => (d, Some(r)),
            None => (start.clone(), None),
        };
        DivisionRunResult {
            initial_division: start.clone(),
            final_division,
            report,
            iterations,
            history,
            termination,
            boundary_unresolved: Vec::new(),
            solves: 0,
        }
    };
    for round in 1..=max_iters {
        let Some((next, report)) = step(&current)? else {
            history.push(HistoryEntry::new(current, None));
            let last = history.len().checked_sub(2).map(|k| (history[k].division.clone(), reports[k].clone()));
            let termination = if last.is_some() {
                Termination::IterationCap
            } else {
                Termination::Infeasible
            };
            return Ok(finish(history, last, termination, round));
        };
        history.push(HistoryEntry::new(current.clone(), Some(report.objective)));
        reports.push(report.clone());
        if next == current {
            history.push(HistoryEntry::new(next, Some(report.objective)));
            return Ok(finish(history, Some((current, report)), Termination::FixedPoint, round));
        }
        if let Some(pos) = history.iter().position(|h| h.division == next) {
            history.push(HistoryEntry::new(next, history[pos].objective));
            let best = (pos..reports.len())
                .min_by(|&a, &b| reports[a].objective.total_cmp(&reports[b].objective))
                .expect("segment is non-empty");
            let fin = (history[best].division.clone(), reports[best].clone());
            return Ok(finish(history, Some(fin), Termination::CycleBroken, round));
        }
        current = next;
    }
    let last = history.last().map(|h| h.division.clone()).zip(reports.last().cloned());
    Ok(finish(history, last, Termination::IterationCap, max_iters))
}

/// FET iff the (clamped) distance to the assigned RRH is within its range.
pub fn classify_by_range(topology: &NetworkTopology, ranges: &[f64]) -> GroupDivision {
    GroupDivision::from_flags(
        (0..topology.n_et())
            .map(|et| {
                let (n, d) = topology.assigned_rrh(et);
                clamp_distance(d) <= ranges[n]
            })
            .collect(),
    )
}

/// ETs whose assigned distance lies within `band * range` of their RRH's range.
pub fn boundary_terminals(topology: &NetworkTopology, ranges: &[f64], band: f64) -> Vec<usize> {
    (0..topology.n_et())
        .filter(|&et| {
            let (n, d) = topology.assigned_rrh(et);
            let r = ranges[n];
            band > 0.0 && r > 0.0 && (clamp_distance(d) - r).abs() <= band * r
        })
        .collect()
}

/// Moves every MET with a poor channel to its assigned RRH into the FET set.
pub fn channel_check(
    topology: &NetworkTopology,
    channels: &ChannelRealization,
    division: &GroupDivision,
    params: &SystemParams,
    poor_channel_factor: f64,
) -> GroupDivision {
    let mut out = division.clone();
    for et in division.met_set() {
        let (n, d) = topology.assigned_rrh(et);
        let gain = channels.h_et[(n, et)].norm_sqr();
        let reference = clamp_distance(d).powf(-params.alpha_abs);
        if !(gain >= poor_channel_factor * reference) {
            out.set_fet(et, true);
        }
    }
    out
}

/// One round of the updating process: solve under `prev`, reclassify by the
/// resulting ranges, then settle boundary terminals. Returns the next division
/// and the report of `prev`.
pub fn update_division(
    topology: &NetworkTopology,
    channels: &ChannelRealization,
    prev: &GroupDivision,
    params: &SystemParams,
    options: &DivisionOptions,
) -> Result<(GroupDivision, PowerReport)> {
    let mut ev = Evaluator::new(topology, channels, params, options)?;
    ev.update(prev)?
        .ok_or_else(|| Error::Infeasible(format!("division {} admits no feasible solution", prev.bitstring())))
}

/// Greedy boundary settlement in ascending ET order. Also returns the ETs for
/// which neither assignment was feasible; those keep their assignment.
pub fn boundary_refine(
    topology: &NetworkTopology,
    channels: &ChannelRealization,
    division: &GroupDivision,
    ranges: &[f64],
    params: &SystemParams,
    options: &DivisionOptions,
) -> Result<(GroupDivision, Vec<usize>)> {
    if ranges.len() != topology.n_rrh() {
        return Err(param("one range per RRH is required"));
    }
    let mut ev = Evaluator::new(topology, channels, params, options)?;
    let out = ev.boundary_refine(division.clone(), ranges)?;
    Ok((out, ev.unresolved))
}

/// Starts with every ET as an MET.
pub fn algorithm1(
    topology: &NetworkTopology,
    channels: &ChannelRealization,
    params: &SystemParams,
    options: &DivisionOptions,
) -> Result<DivisionRunResult> {
    let mut ev = Evaluator::new(topology, channels, params, options)?;
    ev.iterate(GroupDivision::all_met(topology.n_et()))
}

/// Starts from the ranges the green energy alone supports.
pub fn algorithm2(
    topology: &NetworkTopology,
    channels: &ChannelRealization,
    params: &SystemParams,
    options: &DivisionOptions,
) -> Result<DivisionRunResult> {
    let mut ev = Evaluator::new(topology, channels, params, options)?;
    let initial = classify_by_range(topology, &initial_green_range(params));
    ev.iterate(initial)
}

/// Evaluates every division; ties go to the lowest bitmask.
pub fn brute_force(
    topology: &NetworkTopology,
    channels: &ChannelRealization,
    params: &SystemParams,
    options: &DivisionOptions,
) -> Result<DivisionRunResult> {
    let ev = Evaluator::new(topology, channels, params, options)?;
    let n = topology.n_et();
    if n > options.brute_force_cap {
        return Err(param(format!(
            "brute force over {n} ETs exceeds the cap of {}",
            options.brute_force_cap
        )));
    }
    let reports = (0..1u64 << n)
        .into_par_iter()
        .map(|mask| {
            let d = GroupDivision::from_bitmask(mask, n);
            evaluate(ev.topology, ev.channels, &d, ev.params, &options.solver).map(|r| (d, r))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<usize> = None;
    for (k, (_, r)) in reports.iter().enumerate() {
        if let Some(r) = r {
            if best.is_none_or(|b| r.objective < reports[b].1.as_ref().unwrap().objective) {
                best = Some(k);
            }
        }
    }
    let history = reports
        .iter()
        .map(|(d, r)| HistoryEntry::new(d.clone(), r.as_ref().map(|r| r.objective)))
        .collect();
    let count = reports.len();
    let initial = GroupDivision::all_met(n);
    let (final_division, report, termination) = match best {
        Some(b) => (reports[b].0.clone(), reports[b].1.clone(), Termination::Direct),
        None => (initial.clone(), None, Termination::Infeasible),
    };
    Ok(DivisionRunResult {
        initial_division: initial,
        final_division,
        report,
        iterations: count,
        history,
        termination,
        boundary_unresolved: Vec::new(),
        solves: count,
    })
}

fn fixed(
    topology: &NetworkTopology,
    channels: &ChannelRealization,
    params: &SystemParams,
    options: &DivisionOptions,
    division: GroupDivision,
) -> Result<DivisionRunResult> {
    let mut ev = Evaluator::new(topology, channels, params, options)?;
    let report = ev.report(&division)?;
    let termination = if report.is_some() {
        Termination::Direct
    } else {
        Termination::Infeasible
    };
    Ok(DivisionRunResult {
        initial_division: division.clone(),
        final_division: division.clone(),
        history: vec![HistoryEntry::new(division, report.as_ref().map(|r| r.objective))],
        report,
        iterations: 1,
        termination,
        boundary_unresolved: Vec::new(),
        solves: 1,
    })
}

pub fn baseline_all_fet(
    topology: &NetworkTopology,
    channels: &ChannelRealization,
    params: &SystemParams,
    options: &DivisionOptions,
) -> Result<DivisionRunResult> {
    fixed(topology, channels, params, options, GroupDivision::all_fet(topology.n_et()))
}

pub fn baseline_all_met(
    topology: &NetworkTopology,
    channels: &ChannelRealization,
    params: &SystemParams,
    options: &DivisionOptions,
) -> Result<DivisionRunResult> {
    fixed(topology, channels, params, options, GroupDivision::all_met(topology.n_et()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    Alg1,
    Alg2,
    AllFet,
    AllMet,
    BruteForce,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Alg1,
        Algorithm::Alg2,
        Algorithm::AllFet,
        Algorithm::AllMet,
        Algorithm::BruteForce,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Alg1 => "alg1",
            Algorithm::Alg2 => "alg2",
            Algorithm::AllFet => "all_fet",
            Algorithm::AllMet => "all_met",
            Algorithm::BruteForce => "brute_force",
        }
    }

    pub fn run(
        &self,
        topology: &NetworkTopology,
        channels: &ChannelRealization,
        params: &SystemParams,
        options: &DivisionOptions,
    ) -> Result<DivisionRunResult> {
        match self {
            Algorithm::Alg1 => algorithm1(topology, channels, params, options),
            Algorithm::Alg2 => algorithm2(topology, channels, params, options),
            Algorithm::AllFet => baseline_all_fet(topology, channels, params, options),
            Algorithm::AllMet => baseline_all_met(topology, channels, params, options),
            Algorithm::BruteForce => brute_force(topology, channels, params, options),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == key)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}
