//! Two-stage operation: a training stage that estimates how often each ET
//! ends up an FET, and a long-term stage that freezes the division and never
//! uses the channels of frozen FETs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamform::{fet_harvest, solve_division, power_report, GroupDivision, PowerReport, SystemParams};
use crate::division::{Algorithm, DivisionOptions, DivisionRunResult};
use crate::error::{param, Error, Result};
use crate::topology::{draw_channels, ChannelRealization, NetworkTopology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingResult {
    /// Fraction of feasible training slots in which each ET was an FET.
    pub fet_frequency: Vec<f64>,
    pub frozen_division: GroupDivision,
    /// Feasible training slots; the frequency denominator.
    pub slots_used: usize,
    /// Per-slot runs in slot order; `None` for infeasible slots.
    pub slot_runs: Vec<Option<DivisionRunResult>>,
}

/// FET iff the frequency reaches `threshold` (ties freeze as FET).
pub fn freeze(fet_frequency: &[f64], threshold: f64) -> GroupDivision {
    GroupDivision::from_flags(fet_frequency.iter().map(|&f| f >= threshold).collect())
}

/// Runs `algorithm` on `q_training` fresh fading draws (slots `0..q_training`)
/// over the fixed topology.
pub fn training_stage(
    topology: &NetworkTopology,
    seed: u64,
    q_training: usize,
    threshold: f64,
    params: &SystemParams,
    algorithm: Algorithm,
    options: &DivisionOptions,
) -> Result<TrainingResult> {
    if q_training == 0 {
        return Err(param("q_training must be at least 1"));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(param("threshold must lie in [0, 1]"));
    }
    if !matches!(algorithm, Algorithm::Alg1 | Algorithm::Alg2) {
        return Err(param(format!("training uses alg1 or alg2, not {algorithm}")));
    }
    let runs = (0..q_training as u64)
        .into_par_iter()
        .map(|slot| {
            let ch = draw_channels(topology, seed, slot, params.alpha_abs)?;
            let run = algorithm.run(topology, &ch, params, options)?;
            Ok(run.is_feasible().then_some(run))
        })
        .collect::<Result<Vec<_>>>()?;
    let feasible: Vec<&DivisionRunResult> = runs.iter().flatten().collect();
    if feasible.is_empty() {
        return Err(Error::TrainingFailed);
    }
    let n = topology.n_et();
    let fet_frequency: Vec<f64> = (0..n)
        .map(|et| feasible.iter().filter(|r| r.final_division.is_fet(et)).count() as f64 / feasible.len() as f64)
        .collect();
    Ok(TrainingResult {
        frozen_division: freeze(&fet_frequency, threshold),
        fet_frequency,
        slots_used: feasible.len(),
        slot_runs: runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongtermSlot {
    pub slot: u64,
    /// `None` when the slot was infeasible.
    pub report: Option<PowerReport>,
    /// Largest relative deficit of the average FET harvest below `p_fmin`.
    pub fet_shortfall: f64,
    /// Running sum of feasible-slot objectives up to and including this slot (W).
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongtermResult {
    pub slots: Vec<LongtermSlot>,
    pub infeasible_slots: usize,
}

impl LongtermResult {
    pub fn total(&self) -> f64 {
        self.slots.last().map_or(0.0, |s| s.cumulative)
    }

    pub fn infeasibility_rate(&self) -> f64 {
        if self.slots.is_empty() {
            0.0
        } else {
            self.infeasible_slots as f64 / self.slots.len() as f64
        }
    }

    /// Mean objective over the feasible slots.
    pub fn mean_objective(&self) -> Option<f64> {
        let feasible = self.slots.len() - self.infeasible_slots;
        (feasible > 0).then(|| self.total() / feasible as f64)
    }
}

/// Long-term stage over slots `first_slot..first_slot + q_longterm`.
pub fn longterm_stage(
    topology: &NetworkTopology,
    seed: u64,
    division: &GroupDivision,
    first_slot: u64,
    q_longterm: usize,
    params: &SystemParams,
    options: &DivisionOptions,
) -> Result<LongtermResult> {
    let slots = (first_slot..first_slot + q_longterm as u64)
        .map(|s| Ok((s, draw_channels(topology, seed, s, params.alpha_abs)?)))
        .collect::<Result<Vec<_>>>()?;
    longterm_stage_with_channels(topology, division, &slots, params, options)
}

/// Long-term stage over caller-supplied `(slot, channels)` pairs.
pub fn longterm_stage_with_channels(
    topology: &NetworkTopology,
    division: &GroupDivision,
    slots: &[(u64, ChannelRealization)],
    params: &SystemParams,
    options: &DivisionOptions,
) -> Result<LongtermResult> {
    params.validate()?;
    params.check_topology(topology)?;
    if division.n_et() != topology.n_et() {
        return Err(param("division size does not match the ET count"));
    }
    let reports = slots
        .par_iter()
        .map(|(_, ch)| {
            let (sdp, sol) = solve_division(topology, ch, division, params, &options.solver)?;
            Ok(sol.is_optimal().then(|| power_report(&sdp, &sol)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cumulative = 0.0;
    let mut infeasible_slots = 0;
    let out = slots
        .iter()
        .zip(reports)
        .map(|((slot, _), report)| {
            let fet_shortfall = report.as_ref().map_or(0.0, |r| shortfall(topology, division, r, params));
            match &report {
                Some(r) => cumulative += r.objective,
                None => infeasible_slots += 1,
            }
            LongtermSlot {
                slot: *slot,
                report,
                fet_shortfall,
                cumulative,
            }
        })
        .collect();
    Ok(LongtermResult {
        slots: out,
        infeasible_slots,
    })
}

fn shortfall(topology: &NetworkTopology, division: &GroupDivision, report: &PowerReport, params: &SystemParams) -> f64 {
    division
        .fet_set()
        .into_iter()
        .map(|et| {
            let (n, d) = topology.assigned_rrh(et);
            let e = fet_harvest(report.p_op[n], d, params);
            ((params.p_fmin - e) / params.p_fmin).max(0.0)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::division::baseline_all_met;
    use crate::topology::{generate_topology, Complex64};

    fn instance(seed: u64) -> (NetworkTopology, SystemParams) {
        (generate_topology(seed, 3, 4, 7, 20.0).unwrap(), SystemParams::reference_defaults(3, 4))
    }

    #[test]
    fn freeze_rule() {
        let f = [0.7, 0.5, 0.4, 1.0, 0.0];
        assert_eq!(freeze(&f, 0.5).flags(), &[true, true, false, true, false]);
        assert_eq!(freeze(&f, 1.0).flags(), &[false, false, false, true, false]);
        assert_eq!(freeze(&f, 0.0), GroupDivision::all_fet(5));
    }

    #[test]
    fn training_frequencies_match_slot_runs() {
        let (topo, p) = instance(4);
        let opts = DivisionOptions::default();
        let t = training_stage(&topo, 9, 10, 0.5, &p, Algorithm::Alg2, &opts).unwrap();
        assert_eq!(t.slot_runs.len(), 10);
        assert_eq!(t.slots_used, t.slot_runs.iter().flatten().count());
        for et in 0..7 {
            let hits = t.slot_runs.iter().flatten().filter(|r| r.final_division.is_fet(et)).count();
            assert_eq!(t.fet_frequency[et], hits as f64 / t.slots_used as f64);
            assert_eq!(t.frozen_division.is_fet(et), t.fet_frequency[et] >= 0.5);
        }
        for (slot, run) in t.slot_runs.iter().enumerate() {
            let ch = draw_channels(&topo, 9, slot as u64, p.alpha_abs).unwrap();
            let again = Algorithm::Alg2.run(&topo, &ch, &p, &opts).unwrap();
            assert_eq!(run.as_ref().unwrap(), &again);
        }
    }

    #[test]
    fn training_guards() {
        let (topo, mut p) = instance(0);
        let opts = DivisionOptions::default();
        assert!(training_stage(&topo, 0, 0, 0.5, &p, Algorithm::Alg1, &opts).is_err());
        assert!(training_stage(&topo, 0, 1, 1.5, &p, Algorithm::Alg1, &opts).is_err());
        assert!(training_stage(&topo, 0, 1, 0.5, &p, Algorithm::BruteForce, &opts).is_err());
        p.sinr_min = 20.0;
        assert!(matches!(
            training_stage(&topo, 0, 2, 0.5, &p, Algorithm::Alg1, &opts),
            Err(Error::TrainingFailed)
        ));
    }

    #[test]
    fn frozen_all_met_matches_baseline() {
        let (topo, p) = instance(5);
        let opts = DivisionOptions::default();
        let lt = longterm_stage(&topo, 3, &GroupDivision::all_met(7), 10, 4, &p, &opts).unwrap();
        for s in &lt.slots {
            let ch = draw_channels(&topo, 3, s.slot, p.alpha_abs).unwrap();
            let base = baseline_all_met(&topo, &ch, &p, &opts).unwrap();
            assert_eq!(s.report, base.report);
        }
        let sum: f64 = lt.slots.iter().filter_map(|s| s.report.as_ref()).map(|r| r.objective).sum();
        assert!((lt.total() - sum).abs() <= 1e-12 * sum);
        assert_eq!(lt.slots.iter().map(|s| s.slot).collect::<Vec<_>>(), vec![10, 11, 12, 13]);
    }

    #[test]
    fn empty_and_deterministic() {
        let (topo, p) = instance(6);
        let opts = DivisionOptions::default();
        let d = GroupDivision::from_bitmask(0b0101011, 7);
        let empty = longterm_stage(&topo, 1, &d, 10, 0, &p, &opts).unwrap();
        assert!(empty.slots.is_empty());
        assert_eq!(empty.total(), 0.0);
        let a = longterm_stage(&topo, 1, &d, 10, 3, &p, &opts).unwrap();
        let b = longterm_stage(&topo, 1, &d, 10, 3, &p, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.slots.iter().all(|s| s.fet_shortfall <= 1e-6));
    }

    #[test]
    fn frozen_fet_columns_are_never_read() {
        let (topo, p) = instance(7);
        let opts = DivisionOptions::default();
        let d = GroupDivision::from_bitmask(0b1010110, 7);
        let slots: Vec<(u64, ChannelRealization)> =
            (10..13).map(|s| (s, draw_channels(&topo, 2, s, p.alpha_abs).unwrap())).collect();
        let base = longterm_stage_with_channels(&topo, &d, &slots, &p, &opts).unwrap();
        for fill in [Complex64::new(0.0, 0.0), Complex64::new(f64::NAN, f64::NAN)] {
            let masked: Vec<(u64, ChannelRealization)> = slots
                .iter()
                .map(|(s, ch)| {
                    let mut ch = ch.clone();
                    for et in d.fet_set() {
                        ch.h_et.column_mut(et).fill(fill);
                    }
                    (*s, ch)
                })
                .collect();
            let got = longterm_stage_with_channels(&topo, &d, &masked, &p, &opts).unwrap();
            assert_eq!(serde_json::to_string(&got).unwrap(), serde_json::to_string(&base).unwrap());
        }
    }
}
