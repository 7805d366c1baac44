//! Whole-run simulation front door and the JSON-lines trace.
//!
//! A trace is a header line, one line per unit (identity, holders,
//! payload) and one line per slot. [`verify_trace`] rebuilds the
//! delivery report from a trace alone by running Gaussian elimination on
//! each receiver's received equations plus its cache.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::delayed_csit::{required_batch, simulate_delayed};
use crate::error::{Error, Result};
use crate::field::Fe;
use crate::full_csit::simulate_full;
use crate::log::{eliminate, DeliveryReport, SlotKind, SlotRecord, TransmissionLog};
use crate::mixed::{simulate_mixed, MixedReport};
use crate::model::{derived_dimensions, normalize_config, Demand, RawConfig, SystemConfig};
use crate::placement::{place_caches, CachePlacement, MinifileId, UnitSym};
use crate::ratio::exact;
use crate::rng::SeedTree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Full,
    Delayed,
    Mixed,
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub regime: Regime,
    pub cfg: SystemConfig,
    pub demand: Demand,
    pub batch: usize,
    pub placement: CachePlacement,
    pub log: TransmissionLog,
    pub report: DeliveryReport,
    pub mixed: Option<MixedReport>,
}

/// Runs one regime end to end. `batch` is the number of symbols per
/// unit; by default 1 for full CSIT and the smallest clearing batch
/// otherwise.
pub fn simulate(regime: Regime, cfg: &SystemConfig, demand: &Demand, batch: Option<usize>) -> Result<Simulation> {
    cfg.check_simulatable()?;
    let (placement, log, report, mixed, b) = match regime {
        Regime::Full | Regime::Delayed => {
            let b = batch.unwrap_or(match regime {
                Regime::Full => 1,
                _ => required_batch(cfg.t_t + cfg.t_r, cfg.t_r + 1),
            });
            let dims = derived_dimensions(cfg, b)?;
            let placement = place_caches(cfg, &dims, &SeedTree::new(cfg.seed))?;
            let (log, report) = if regime == Regime::Full {
                let run = simulate_full(cfg, demand, &placement, 0..b)?;
                (run.log, run.report)
            } else {
                let run = simulate_delayed(cfg, demand, &placement, 0..b)?;
                (run.log, run.report)
            };
            (placement, log, report, None, b)
        }
        Regime::Mixed => {
            let run = simulate_mixed(cfg, demand, batch)?;
            let b = run.split.batch();
            (run.placement, run.log, run.report, Some(run.summary), b)
        }
    };
    Ok(Simulation { regime, cfg: cfg.clone(), demand: demand.clone(), batch: b, placement, log, report, mixed })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Line {
    Header {
        regime: Regime,
        config: serde_json::Value,
        demand: Vec<usize>,
        seed: u64,
        batch: usize,
        units: usize,
        slots: usize,
        retries: usize,
    },
    Unit {
        index: usize,
        id: MinifileId,
        tx_holders: Vec<usize>,
        rx_holders: Vec<usize>,
        payload: Vec<Fe>,
    },
    Slot(SlotRecord),
}

fn config_json(cfg: &SystemConfig) -> serde_json::Value {
    serde_json::json!({
        "k_t": cfg.k_t,
        "k_r": cfg.k_r,
        "n_files": cfg.n_files,
        "m_t": exact(&cfg.m_t),
        "m_r": exact(&cfg.m_r),
        "alpha": exact(&cfg.alpha),
        "field_prime": cfg.field_prime,
        "seed": cfg.seed,
    })
}

pub fn write_trace<W: Write>(sim: &Simulation, mut w: W) -> std::io::Result<()> {
    let mut emit = |line: &Line| -> std::io::Result<()> {
        serde_json::to_writer(&mut w, line)?;
        w.write_all(b"\n")
    };
    emit(&Line::Header {
        regime: sim.regime,
        config: config_json(&sim.cfg),
        demand: sim.demand.as_slice().to_vec(),
        seed: sim.cfg.seed,
        batch: sim.batch,
        units: sim.placement.catalog().len(),
        slots: sim.log.len(),
        retries: sim.report.retries,
    })?;
    for (index, id) in sim.placement.catalog().ids().iter().enumerate() {
        let (tx_holders, rx_holders) = sim.placement.holders(index);
        emit(&Line::Unit { index, id: id.clone(), tx_holders, rx_holders, payload: sim.placement.payload(index).to_vec() })?;
    }
    for s in &sim.log.slots {
        emit(&Line::Slot(s.clone()))?;
    }
    Ok(())
}

/// Rebuilds the delivery report from trace text, checking the trace's
/// internal consistency along the way.
pub fn verify_trace(text: &str) -> Result<DeliveryReport> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let bad = |line: usize, msg: String| Error::Trace { line: line + 1, msg };
    let parse = |n: usize, l: &str| serde_json::from_str::<Line>(l).map_err(|e| bad(n, e.to_string()));

    let (n0, first) = lines.next().ok_or_else(|| bad(0, "empty trace".into()))?;
    let Line::Header { regime: _, config, demand, seed, batch, units, slots, retries } = parse(n0, first)? else {
        return Err(bad(n0, "first record must be the header".into()));
    };
    let cfg = normalize_config(&RawConfig::from_json(&config.to_string())?)?;
    if cfg.seed != seed {
        return Err(bad(n0, "header seed disagrees with config".into()));
    }
    let demand = Demand::new(demand, &cfg)?;
    let f = cfg.field();
    let p = cfg.field_prime;
    if units > 1 << 20 || batch > 1 << 16 || slots > 1 << 24 {
        return Err(bad(n0, "trace dimensions out of range".into()));
    }

    let mut files = Vec::with_capacity(units);
    let mut payload: Vec<Vec<Fe>> = Vec::with_capacity(units);
    let mut rx_cache = vec![Vec::new(); cfg.k_r];
    let mut log = TransmissionLog::default();
    for (n, l) in lines {
        match parse(n, l)? {
            Line::Header { .. } => return Err(bad(n, "repeated header".into())),
            Line::Unit { index, id, tx_holders, rx_holders, payload: vals } => {
                if index != payload.len() || !log.is_empty() {
                    return Err(bad(n, format!("unit {index} out of order")));
                }
                if id.n == 0 || id.n > cfg.n_files || vals.len() != batch || vals.iter().any(|v| v.0 >= p) {
                    return Err(bad(n, format!("unit {index} is malformed")));
                }
                if tx_holders.iter().any(|&l| l == 0 || l > cfg.k_t) || tx_holders != id.t.members() {
                    return Err(bad(n, format!("unit {index}: transmit holders disagree with its id")));
                }
                if rx_holders.iter().any(|&k| k == 0 || k > cfg.k_r) || rx_holders != id.r.members() {
                    return Err(bad(n, format!("unit {index}: receive holders disagree with its id")));
                }
                for &k in &rx_holders {
                    rx_cache[k - 1].push(index);
                }
                files.push(id.n);
                payload.push(vals);
            }
            Line::Slot(s) => {
                if payload.len() != units {
                    return Err(bad(n, "slot before all units".into()));
                }
                check_slot(&s, log.len(), &cfg, &payload, batch).map_err(|m| bad(n, m))?;
                log.slots.push(s);
            }
        }
    }
    if payload.len() != units || log.len() != slots {
        return Err(bad(0, format!("expected {units} units and {slots} slots")));
    }

    let symbol = |s: UnitSym| payload[s.unit][s.pos];
    let mut ok = Vec::with_capacity(cfg.k_r);
    let mut delivered = 0;
    for k in 1..=cfg.k_r {
        let known: BTreeMap<UnitSym, Fe> = rx_cache[k - 1]
            .iter()
            .flat_map(|&u| (0..batch).map(move |pos| UnitSym { unit: u, pos }))
            .map(|s| (s, symbol(s)))
            .collect();
        let got = eliminate(&f, &log.equations_of(k), &known);
        let needed: Vec<usize> = (0..units).filter(|&u| files[u] == demand.file(k - 1) && !rx_cache[k - 1].contains(&u)).collect();
        delivered += needed.len() * batch;
        ok.push(needed.iter().all(|&u| (0..batch).all(|pos| {
            let s = UnitSym { unit: u, pos };
            got.get(&s) == Some(&symbol(s))
        })));
    }
    Ok(DeliveryReport::new(ok, log.len(), delivered, seed, retries))
}

fn check_slot(s: &SlotRecord, expect: usize, cfg: &SystemConfig, payload: &[Vec<Fe>], batch: usize) -> std::result::Result<(), String> {
    let f = cfg.field();
    let p = cfg.field_prime;
    if s.slot != expect {
        return Err(format!("slot {} out of order", s.slot));
    }
    if s.channel.rows() != cfg.k_r || s.channel.cols() != cfg.k_t || s.transmit.len() != cfg.k_t {
        return Err("channel or transmit shape".into());
    }
    if s.received.len() != cfg.k_r || s.equations.len() != cfg.k_r {
        return Err("one received value and equation per receiver expected".into());
    }
    if s.transmit.iter().chain(&s.received).any(|v| v.0 >= p) || (0..cfg.k_r).any(|i| s.channel.row(i).iter().any(|v| v.0 >= p)) {
        return Err("field element out of range".into());
    }
    if s.t.ground() != cfg.k_t || s.s.ground() != cfg.k_r {
        return Err("block sets over the wrong ground set".into());
    }
    if let SlotKind::Delayed { audience, .. } = &s.kind {
        if audience.ground() != cfg.k_r {
            return Err("audience over the wrong ground set".into());
        }
    }
    if s.channel.mul_vec(&f, &s.transmit) != s.received {
        return Err("received values do not match channel times transmit".into());
    }
    for (k, form) in s.equations.iter().enumerate() {
        if !form.is_canonical(p) || form.terms().iter().any(|(u, _)| u.unit >= payload.len() || u.pos >= batch) {
            return Err(format!("equation of receiver {} is malformed", k + 1));
        }
        if form.eval(&f, |u| payload[u.unit][u.pos]) != s.received[k] {
            return Err(format!("equation of receiver {} does not explain its received value", k + 1));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_of(regime: Regime, cfg: &SystemConfig) -> (Simulation, String) {
        let sim = simulate(regime, cfg, &Demand::round_robin(cfg), None).unwrap();
        let mut out = Vec::new();
        write_trace(&sim, &mut out).unwrap();
        (sim, String::from_utf8(out).unwrap())
    }

    #[test]
    fn replay_reproduces_reports() {
        let cfg = SystemConfig::from_t(2, 3, 3, 2, 1, 7).unwrap();
        for regime in [Regime::Full, Regime::Delayed] {
            let (sim, text) = trace_of(regime, &cfg);
            assert_eq!(verify_trace(&text).unwrap(), sim.report);
        }
        let cfg = cfg.with_alpha(crate::ratio::frac(1, 2)).unwrap();
        let (sim, text) = trace_of(Regime::Mixed, &cfg);
        assert_eq!(verify_trace(&text).unwrap(), sim.report);
    }

    #[test]
    fn tampering_is_detected() {
        let cfg = SystemConfig::from_t(2, 2, 2, 1, 1, 1).unwrap();
        let (_, text) = trace_of(Regime::Full, &cfg);
        let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
        let last = lines.len() - 1;
        let mut v: serde_json::Value = serde_json::from_str(&lines[last]).unwrap();
        let r = v["received"][0].as_u64().unwrap();
        v["received"][0] = serde_json::json!(r ^ 1);
        lines[last] = v.to_string();
        assert!(matches!(verify_trace(&lines.join("\n")), Err(Error::Trace { .. })));
        assert!(verify_trace("").is_err());
        assert!(verify_trace(&lines[1]).is_err());
    }

    #[test]
    fn delayed_slots_carry_order() {
        let cfg = SystemConfig::from_t(2, 3, 3, 2, 1, 7).unwrap();
        let (_, text) = trace_of(Regime::Delayed, &cfg);
        for l in text.lines().filter(|l| l.contains("\"record\":\"slot\"")) {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            assert!(v["kind"]["order"].as_u64().is_some());
        }
    }
}
