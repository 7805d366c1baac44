//! Time sharing between the two delivery schemes.
//!
//! The symbol layers of every unit are split into a delayed share and a
//! full share. The delayed share goes through the retrospective scheme,
//! the rest through zero-forcing. With shares proportional to
//! alpha * d_D and (1 - alpha) * d_C, the two parts take slots in the
//! ratio alpha : 1 - alpha.

use std::ops::Range;

use num_integer::Integer;
use num_traits::{One, Signed};
use serde::Serialize;

use crate::delayed_csit::{required_batch, simulate_delayed, DelayedRun};
use crate::dof::{dof_delayed, dof_full, dof_mixed};
use crate::error::{Error, Result};
use crate::full_csit::{simulate_full, FullRun};
use crate::log::{DeliveryReport, TransmissionLog};
use crate::model::{derived_dimensions, Demand, Dimensions, SystemConfig};
use crate::placement::{place_caches, CachePlacement};
use crate::ratio::{exact, int, Rational};
use crate::rng::SeedTree;

/// Fraction of each coherence block spent on training and feedback.
pub fn alpha_from_block(t_f: &Rational, t_c: &Rational) -> Result<Rational> {
    if !t_c.is_positive() {
        return Err(Error::OutOfRange(format!("t_c = {} (must be > 0)", exact(t_c))));
    }
    if t_f.is_negative() || t_f > t_c {
        return Err(Error::OutOfRange(format!("t_f = {} (must lie in [0, t_c])", exact(t_f))));
    }
    Ok(t_f / t_c)
}

/// Share of the content that should go through the delayed scheme.
pub fn delayed_share(cfg: &SystemConfig) -> Result<Rational> {
    let a = &cfg.alpha;
    let d_d = dof_delayed(cfg.t_t as u64, cfg.t_r as u64)?;
    let d_c = dof_full(cfg.t_t as u64, cfg.t_r as u64, cfg.k_r as u64)?;
    let num = a * d_d;
    let den = &num + (Rational::one() - a) * d_c;
    Ok(num / den)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkloadSplit {
    pub alpha: Rational,
    pub delayed_share: Rational,
    pub full_share: Rational,
    pub delayed_layers: Range<usize>,
    pub full_layers: Range<usize>,
    /// Realized delayed fraction minus the target share.
    pub residual: Rational,
}

impl WorkloadSplit {
    pub fn batch(&self) -> usize {
        self.full_layers.end
    }
}

/// Smallest symbols-per-unit count that realizes the delayed share
/// exactly while clearing the delayed schedule.
pub fn natural_batch(cfg: &SystemConfig) -> Result<usize> {
    let share = delayed_share(cfg)?;
    let p = usize::try_from(share.numer().clone()).map_err(|_| Error::OutOfRange("delayed share".into()))?;
    let q = usize::try_from(share.denom().clone()).map_err(|_| Error::OutOfRange("delayed share".into()))?;
    if p == 0 {
        return Ok(1);
    }
    let need = required_batch(cfg.t_t + cfg.t_r, cfg.t_r + 1);
    Ok(q * (need / need.gcd(&p)))
}

/// Splits the `dims.symbols_per_minifile` layers: the first layers go
/// to the delayed scheme in multiples of its required batch, rounding to
/// the nearest such multiple with ties going to the full scheme.
pub fn partition_workload(cfg: &SystemConfig, dims: &Dimensions) -> Result<WorkloadSplit> {
    cfg.check_simulatable()?;
    let share = delayed_share(cfg)?;
    let b = dims.symbols_per_minifile;
    if b == 0 {
        return Err(Error::OutOfRange("batch of 0 symbols".into()));
    }
    let need = required_batch(cfg.t_t + cfg.t_r, cfg.t_r + 1);
    let target = &share * int(b as i64) / int(need as i64);
    let floor = target.floor();
    let blocks = if target.clone() - &floor > Rational::new(1.into(), 2.into()) { floor + Rational::one() } else { floor };
    let b_d = usize::try_from(blocks.to_integer()).expect("share within [0, 1]") * need;
    let residual = int(b_d as i64) / int(b as i64) - &share;
    Ok(WorkloadSplit {
        alpha: cfg.alpha.clone(),
        full_share: Rational::one() - &share,
        delayed_share: share,
        delayed_layers: 0..b_d,
        full_layers: b_d..b,
        residual,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MixedReport {
    #[serde(serialize_with = "crate::model::ser_exact")]
    pub alpha: Rational,
    #[serde(serialize_with = "crate::model::ser_exact")]
    pub d_full: Rational,
    #[serde(serialize_with = "crate::model::ser_exact")]
    pub d_delayed: Rational,
    #[serde(serialize_with = "crate::model::ser_exact")]
    pub d_mixed_expected: Rational,
    #[serde(serialize_with = "ser_opt")]
    pub d_mixed_empirical: Option<Rational>,
    pub slots_delayed: usize,
    pub slots_full: usize,
    #[serde(serialize_with = "crate::model::ser_exact")]
    pub residual: Rational,
}

fn ser_opt<S: serde::Serializer>(r: &Option<Rational>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match r {
        Some(r) => s.serialize_str(&exact(r)),
        None => s.serialize_none(),
    }
}

#[derive(Clone, Debug)]
pub struct MixedRun {
    pub split: WorkloadSplit,
    pub placement: CachePlacement,
    pub delayed: Option<DelayedRun>,
    pub full: Option<FullRun>,
    /// Delayed slots first, then full slots, renumbered.
    pub log: TransmissionLog,
    pub report: DeliveryReport,
    pub summary: MixedReport,
}

/// Runs both schemes on one shared placement. `batch` overrides the
/// number of symbols per unit.
pub fn simulate_mixed(cfg: &SystemConfig, demand: &Demand, batch: Option<usize>) -> Result<MixedRun> {
    let b = match batch {
        Some(b) => b,
        None => natural_batch(cfg)?,
    };
    let dims = derived_dimensions(cfg, b)?;
    let split = partition_workload(cfg, &dims)?;
    let placement = place_caches(cfg, &dims, &SeedTree::new(cfg.seed))?;
    let delayed = if split.delayed_layers.is_empty() {
        None
    } else {
        Some(simulate_delayed(cfg, demand, &placement, split.delayed_layers.clone())?)
    };
    let full = if split.full_layers.is_empty() {
        None
    } else {
        Some(simulate_full(cfg, demand, &placement, split.full_layers.clone())?)
    };

    let mut log = TransmissionLog::default();
    for part in [delayed.as_ref().map(|d| &d.log), full.as_ref().map(|f| &f.log)].into_iter().flatten() {
        let offset = log.len();
        log.slots.extend(part.slots.iter().cloned().map(|mut s| {
            s.slot += offset;
            s
        }));
    }
    let report = match (&delayed, &full) {
        (Some(d), Some(f)) => d.report.merge(&f.report),
        (Some(d), None) => d.report.clone(),
        (None, Some(f)) => f.report.clone(),
        (None, None) => unreachable!("batch is positive"),
    };
    let summary = MixedReport {
        alpha: cfg.alpha.clone(),
        d_full: dof_full(cfg.t_t as u64, cfg.t_r as u64, cfg.k_r as u64)?,
        d_delayed: dof_delayed(cfg.t_t as u64, cfg.t_r as u64)?,
        d_mixed_expected: dof_mixed(cfg.t_t as u64, cfg.t_r as u64, cfg.k_r as u64, &cfg.alpha)?,
        d_mixed_empirical: report.empirical_dof.clone(),
        slots_delayed: delayed.as_ref().map_or(0, |d| d.report.slot_count),
        slots_full: full.as_ref().map_or(0, |f| f.report.slot_count),
        residual: split.residual.clone(),
    };
    Ok(MixedRun { split, placement, delayed, full, log, report, summary })
}

pub fn run_mixed_delivery(cfg: &SystemConfig, demand: &Demand) -> Result<DeliveryReport> {
    let run = simulate_mixed(cfg, demand, None)?;
    if let Some(k) = run.report.decoded_ok.iter().position(|ok| !ok) {
        return Err(Error::DecodingFailure { receiver: k + 1, missing: 1 });
    }
    Ok(run.report)
}
