//! Delivery with delayed CSIT.
//!
//! Each round (T, S) turns the block's units into order-(t_r+1) messages
//! U_R (one per group R of S, the sum of one unit per member) and sends
//! them with a retrospective multi-phase schedule. A phase-j slot carries
//! K-j+1 raw order-j symbols for a j-subset S' on the first K-j+1
//! transmitters of T. Receivers outside S' keep what they overheard; once
//! the phase ends, every (j+1)-subset A gets j random combinations of the
//! j+1 equations overheard by its members, which become order-(j+1)
//! symbols for A. Order-K symbols are broadcast one per slot.
//!
//! The transmitter only ever uses channels of slots that are already
//! over: [`MatEngine::next_transmit`] takes no channel, and the channel of
//! a slot is handed in afterwards through [`MatEngine::observe`].

use std::collections::BTreeMap;
use std::ops::Range;

use num_integer::Integer;

use crate::error::{Error, Result};
use crate::field::{Fe, FieldMatrix, PrimeField};
use crate::log::{combine, DeliveryReport, LinForm, SlotKind, SlotRecord, TransmissionLog};
use crate::model::{derived_dimensions, Demand, SystemConfig};
use crate::placement::{block_unit, enumerate_subsets, place_caches, sub_subsets, CachePlacement, SubsetId, UnitSym};
use crate::ratio::{int, Rational};
use crate::rng::SeedTree;

pub use crate::full_csit::RETRY_CAP;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Provenance {
    /// Sum of one unit per audience member, in member order.
    Fresh { units: Vec<usize> },
    /// Random combinations of equations overheard in the previous phase.
    Derived,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrderMessage {
    pub order: usize,
    pub audience: SubsetId,
    pub symbols: Vec<Fe>,
    /// The same symbols as forms over unit symbols.
    pub forms: Vec<LinForm>,
    pub provenance: Provenance,
}

/// One fresh message per (t_r+1)-subset R of S; symbol i is the sum over
/// r in R of position `layers.start + i` of the unit r wants.
pub fn build_order_messages(
    cfg: &SystemConfig,
    placement: &CachePlacement,
    demand: &Demand,
    t: &SubsetId,
    s: &SubsetId,
    layers: Range<usize>,
) -> Result<Vec<OrderMessage>> {
    let f = cfg.field();
    let groups = sub_subsets(s, cfg.t_r + 1)?;
    Ok(groups
        .into_iter()
        .map(|r| {
            let units: Vec<usize> = r
                .members()
                .iter()
                .map(|&k| block_unit(placement.catalog(), cfg.k_r, demand.file(k - 1), t, s, &r, k))
                .collect();
            let forms: Vec<LinForm> = layers
                .clone()
                .map(|pos| {
                    LinForm::from_map(units.iter().map(|&unit| (UnitSym { unit, pos }, Fe::ONE)).collect())
                })
                .collect();
            let symbols = layers
                .clone()
                .map(|pos| units.iter().fold(Fe::ZERO, |acc, &u| f.add(acc, placement.payload(u)[pos])))
                .collect();
            OrderMessage { order: cfg.t_r + 1, audience: r, symbols, forms, provenance: Provenance::Fresh { units } }
        })
        .collect())
}

/// Slots needed to deliver `n` order-j symbols in total (over all
/// j-subsets) to K receivers.
pub fn mat_slot_count(k: u64, j: u64, n: &Rational) -> Rational {
    if j >= k {
        return n.clone();
    }
    let streams = int((k - j + 1) as i64);
    let next = n * int((k - j) as i64) / &streams * int(j as i64) / int((j + 1) as i64);
    n / streams + mat_slot_count(k, j + 1, &next)
}

/// Per-audience symbol counts of every order when each order-j0 audience
/// starts with `b` symbols, or `None` if some phase does not split evenly.
pub fn phase_counts(k: usize, j0: usize, b: usize) -> Option<Vec<usize>> {
    let mut n = b;
    let mut out = vec![n];
    for j in j0..k {
        let streams = k - j + 1;
        if !n.is_multiple_of(streams) {
            return None;
        }
        n = n / streams * j;
        out.push(n);
    }
    Some(out)
}

/// Smallest per-message batch that clears every phase; a batch works iff
/// it is a multiple of this.
pub fn required_batch(k: usize, j0: usize) -> usize {
    let mut need = 1usize;
    let mut scale = Rational::from_integer(1.into());
    for j in j0..k {
        // symbols per audience entering phase j, per starting symbol
        let per = &scale / int((k - j + 1) as i64);
        need = need.lcm(&usize::try_from(per.denom().clone()).expect("small denominator"));
        scale = per * int(j as i64);
    }
    need
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatSlot {
    pub order: usize,
    pub audience: SubsetId,
    /// Slot index within the audience's share of the phase.
    pub index: usize,
    pub antennas: Vec<usize>,
    pub transmit: Vec<Fe>,
    pub forms: Vec<LinForm>,
    pub channel: FieldMatrix,
}

/// Pending slot whose transmit vector is fixed but whose channel is not
/// yet known.
#[derive(Clone, Debug)]
struct Pending {
    audience: SubsetId,
    index: usize,
    symbols: Vec<(LinForm, Fe)>,
    transmit: Vec<Fe>,
}

#[derive(Clone, Debug)]
pub struct MatEngine {
    f: PrimeField,
    k_t: usize,
    t: SubsetId,
    s: SubsetId,
    j0: usize,
    order: usize,
    queue: BTreeMap<SubsetId, Vec<(LinForm, Fe)>>,
    plan: Vec<(SubsetId, usize)>,
    cursor: usize,
    pending: Option<Pending>,
    /// (audience, index, overhearing receiver) -> equation
    overheard: BTreeMap<(SubsetId, usize, usize), (LinForm, Fe)>,
    slots: Vec<MatSlot>,
    combos: BTreeMap<(SubsetId, usize), FieldMatrix>,
    seeds: SeedTree,
    round: usize,
    retries: usize,
}

impl MatEngine {
    /// `messages` must be the round's order-j0 messages with equal symbol
    /// counts.
    pub fn new(f: PrimeField, k_t: usize, t: SubsetId, s: SubsetId, messages: &[OrderMessage], seeds: SeedTree, round: usize) -> Result<Self> {
        let k = s.len();
        let j0 = messages.first().map_or(k, |m| m.order);
        if t.len() < k + 1 - j0.min(k) {
            return Err(Error::Domain(format!("{} transmitters cannot send {} streams", t.len(), k + 1 - j0)));
        }
        let b = messages.first().map_or(0, |m| m.symbols.len());
        if messages.iter().any(|m| m.symbols.len() != b || m.order != j0) {
            return Err(Error::Domain("messages differ in order or length".into()));
        }
        let need = required_batch(k, j0);
        if !b.is_multiple_of(need) {
            return Err(Error::Divisibility { batch: b, required: need });
        }
        let queue = messages
            .iter()
            .map(|m| (m.audience.clone(), m.forms.iter().cloned().zip(m.symbols.iter().copied()).collect()))
            .collect();
        let mut engine = Self {
            f,
            k_t,
            t,
            s,
            j0,
            order: j0,
            queue,
            plan: Vec::new(),
            cursor: 0,
            pending: None,
            overheard: BTreeMap::new(),
            slots: Vec::new(),
            combos: BTreeMap::new(),
            seeds,
            round,
            retries: 0,
        };
        engine.plan_phase();
        Ok(engine)
    }

    fn streams(&self) -> usize {
        self.s.len() - self.order + 1
    }

    fn plan_phase(&mut self) {
        let n = self.streams();
        self.plan = self.queue.iter().flat_map(|(a, syms)| (0..syms.len() / n).map(move |i| (a.clone(), i))).collect();
        self.cursor = 0;
    }

    /// Builds the next order's symbols from the equations overheard in
    /// the phase that just ended.
    fn advance_phase(&mut self) -> Result<()> {
        let j = self.order;
        let c = self.queue.values().next().map_or(0, |v| v.len() / self.streams());
        let mut next = BTreeMap::new();
        for (rank, a) in sub_subsets(&self.s, j + 1)?.into_iter().enumerate() {
            let mut syms = Vec::with_capacity(c * j);
            for i in 0..c {
                let g = self.draw_combination(j, rank, i)?;
                let eqs: Vec<&(LinForm, Fe)> = a
                    .members()
                    .iter()
                    .map(|&m| &self.overheard[&(a.without(m), i, m)])
                    .collect();
                for row in 0..j {
                    let form = combine(&self.f, (0..=j).map(|p| (g[(row, p)], &eqs[p].0)));
                    let value = (0..=j).fold(Fe::ZERO, |acc, p| self.f.mul_add(acc, g[(row, p)], eqs[p].1));
                    syms.push((form, value));
                }
                self.combos.insert((a.clone(), i), g);
            }
            next.insert(a, syms);
        }
        self.queue = next;
        self.order = j + 1;
        self.overheard.clear();
        self.plan_phase();
        Ok(())
    }

    /// j x (j+1) coefficients whose every j x j minor dropping one column
    /// is invertible, so each member can strip its own equation and solve.
    fn draw_combination(&mut self, j: usize, rank: usize, i: usize) -> Result<FieldMatrix> {
        for attempt in 0..RETRY_CAP {
            let idx = [self.round, j, rank, i, attempt].map(|x| x as u64);
            let g = FieldMatrix::random(&self.f, j, j + 1, &mut self.seeds.stream("mat_combine", &idx));
            let rows: Vec<usize> = (0..j).collect();
            let ok = (0..=j).all(|p| {
                let cols: Vec<usize> = (0..=j).filter(|&c| c != p).collect();
                g.select(&rows, &cols).is_invertible(&self.f)
            });
            if ok {
                return Ok(g);
            }
            self.retries += 1;
        }
        Err(Error::GenericityFailure { what: format!("order-{} combinations", j + 1), attempts: RETRY_CAP })
    }

    /// Transmit vector of the next slot, computed from the message symbols
    /// and the channels of earlier slots only. `None` once the round is over.
    pub fn next_transmit(&mut self) -> Result<Option<Vec<Fe>>> {
        if let Some(p) = &self.pending {
            return Ok(Some(p.transmit.clone()));
        }
        if self.cursor == self.plan.len() {
            if self.order >= self.s.len() || self.plan.is_empty() {
                return Ok(None);
            }
            self.advance_phase()?;
        }
        let n = self.streams();
        let (audience, index) = self.plan[self.cursor].clone();
        let symbols = self.queue[&audience][index * n..(index + 1) * n].to_vec();
        let mut transmit = vec![Fe::ZERO; self.k_t];
        for (a, (_, v)) in self.t.members()[..n].iter().zip(&symbols) {
            transmit[a - 1] = *v;
        }
        self.pending = Some(Pending { audience, index, symbols, transmit: transmit.clone() });
        Ok(Some(transmit))
    }

    /// Matrix of receiver `k`'s own row and the rows of everyone outside
    /// the audience, over the active antennas.
    fn decoding_rows(channel: &FieldMatrix, k: usize, s: &SubsetId, audience: &SubsetId, antennas: &[usize]) -> FieldMatrix {
        let mut rows = vec![k - 1];
        rows.extend(s.difference(audience).members().iter().map(|&m| m - 1));
        let cols: Vec<usize> = antennas.iter().map(|a| a - 1).collect();
        channel.select(&rows, &cols)
    }

    /// Reports the realized channel of the pending slot. Returns `false`
    /// (and keeps the slot pending) if the draw is degenerate for some
    /// audience member, in which case the caller redraws.
    pub fn observe(&mut self, channel: &FieldMatrix) -> Result<bool> {
        let p = self.pending.as_ref().ok_or_else(|| Error::Domain("no slot awaiting a channel".into()))?;
        let antennas = self.t.members()[..p.symbols.len()].to_vec();
        let generic = p
            .audience
            .members()
            .iter()
            .all(|&k| Self::decoding_rows(channel, k, &self.s, &p.audience, &antennas).is_invertible(&self.f));
        if !generic {
            self.retries += 1;
            return Ok(false);
        }
        let p = self.pending.take().expect("checked above");
        for &m in self.s.difference(&p.audience).members() {
            let h: Vec<Fe> = antennas.iter().map(|&a| channel[(m - 1, a - 1)]).collect();
            let form = combine(&self.f, h.iter().copied().zip(p.symbols.iter().map(|(f, _)| f)));
            let value = h.iter().zip(&p.symbols).fold(Fe::ZERO, |acc, (&c, (_, v))| self.f.mul_add(acc, c, *v));
            self.overheard.insert((p.audience.clone(), p.index, m), (form, value));
        }
        self.slots.push(MatSlot {
            order: self.order,
            audience: p.audience,
            index: p.index,
            antennas,
            transmit: p.transmit,
            forms: p.symbols.into_iter().map(|(f, _)| f).collect(),
            channel: channel.clone(),
        });
        self.cursor += 1;
        Ok(true)
    }

    pub fn retries(&self) -> usize {
        self.retries
    }

    fn finish(self, fresh: Vec<OrderMessage>, layers: Range<usize>) -> MatRound {
        let index = self.slots.iter().enumerate().map(|(n, s)| ((s.order, s.audience.clone(), s.index), n)).collect();
        MatRound {
            round: self.round,
            t: self.t,
            s: self.s,
            j0: self.j0,
            fresh,
            layers,
            slots: self.slots,
            index,
            combos: self.combos,
            first_slot: 0,
            retries: self.retries,
        }
    }
}

/// A finished round as the receivers see it in retrospect.
#[derive(Clone, Debug)]
pub struct MatRound {
    pub round: usize,
    pub t: SubsetId,
    pub s: SubsetId,
    pub j0: usize,
    pub fresh: Vec<OrderMessage>,
    pub layers: Range<usize>,
    pub slots: Vec<MatSlot>,
    /// (order, audience, index) -> position in `slots`
    pub index: BTreeMap<(usize, SubsetId, usize), usize>,
    pub combos: BTreeMap<(SubsetId, usize), FieldMatrix>,
    pub first_slot: usize,
    pub retries: usize,
}

/// Runs one round to completion. `channel(slot, attempt)` supplies the
/// realization of each slot, called only after the slot's transmit vector
/// has been fixed.
pub fn mat_schedule(
    mut engine: MatEngine,
    fresh: Vec<OrderMessage>,
    layers: Range<usize>,
    mut channel: impl FnMut(usize, usize) -> FieldMatrix,
) -> Result<MatRound> {
    let mut slot = 0;
    while engine.next_transmit()?.is_some() {
        let mut done = false;
        for attempt in 0..RETRY_CAP {
            if engine.observe(&channel(slot, attempt))? {
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::GenericityFailure { what: format!("channel of slot {slot}"), attempts: RETRY_CAP });
        }
        slot += 1;
    }
    Ok(engine.finish(fresh, layers))
}

/// Structured decoder for receiver `k` in round `r`: peel orders from K
/// down to j0, then strip cached partners from the fresh messages.
pub fn decode_round(
    f: &PrimeField,
    k: usize,
    r: &MatRound,
    log: &TransmissionLog,
    placement: &CachePlacement,
) -> Result<BTreeMap<UnitSym, Fe>> {
    let mut out = BTreeMap::new();
    if !r.s.contains(k) || r.slots.is_empty() {
        return Ok(out);
    }
    let big_k = r.s.len();
    let y = |local: usize| log.slots[r.first_slot + local].received[k - 1];
    let fail = |what: String| Error::SingularSystem(format!("receiver {k}, round {}: {what}", r.round));
    // values[(order, audience)] = decoded symbols, for audiences containing k
    let mut values: BTreeMap<(usize, SubsetId), Vec<Fe>> = BTreeMap::new();
    for j in (r.j0..=big_k).rev() {
        for a in sub_subsets(&r.s, j)?.into_iter().filter(|a| a.contains(k)) {
            let mut syms = Vec::new();
            let mut i = 0;
            while let Some(&local) = r.index.get(&(j, a.clone(), i)) {
                let slot = &r.slots[local];
                let mut rhs = vec![y(local)];
                for &m in r.s.difference(&a).members() {
                    // the equation m overheard, recovered from A ∪ {m}'s symbols
                    let up = a.with(m);
                    let g = &r.combos[&(up.clone(), i)];
                    let v = values.get(&(j + 1, up.clone())).ok_or_else(|| fail(format!("order {} missing", j + 1)))?;
                    let own = up.members().iter().position(|&p| p == k).expect("k in A");
                    let own_local = r.index[&(j, up.without(k), i)];
                    let known = y(own_local);
                    let others: Vec<usize> = (0..=j).filter(|&p| p != own).collect();
                    let rows: Vec<usize> = (0..j).collect();
                    let sys = g.select(&rows, &others);
                    let b: Vec<Fe> = (0..j).map(|c| f.sub(v[i * j + c], f.mul(g[(c, own)], known))).collect();
                    let e = sys.solve(f, &b).map_err(|_| fail("combination system".into()))?;
                    let pm = up.members().iter().position(|&p| p == m).expect("m in A");
                    let at = others.iter().position(|&p| p == pm).expect("m is not k");
                    rhs.push(e[at]);
                }
                let h = MatEngine::decoding_rows(&slot.channel, k, &r.s, &a, &slot.antennas);
                syms.extend(h.solve(f, &rhs).map_err(|_| fail("slot system".into()))?);
                i += 1;
            }
            values.insert((j, a), syms);
        }
    }
    for msg in r.fresh.iter().filter(|m| m.audience.contains(k)) {
        let Provenance::Fresh { units } = &msg.provenance else { continue };
        let v = &values[&(r.j0, msg.audience.clone())];
        let own = msg.audience.members().iter().position(|&p| p == k).expect("k in audience");
        for (i, pos) in r.layers.clone().enumerate() {
            let mut w = v[i];
            for (q, &u) in units.iter().enumerate() {
                if q == own {
                    continue;
                }
                if !placement.rx_has(k, u) {
                    return Err(fail(format!("partner unit {u} not cached")));
                }
                w = f.sub(w, placement.payload(u)[pos]);
            }
            out.insert(UnitSym { unit: units[own], pos }, w);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct DelayedRun {
    pub rounds: Vec<MatRound>,
    pub log: TransmissionLog,
    pub decoded: Vec<BTreeMap<UnitSym, Fe>>,
    pub report: DeliveryReport,
}

/// Runs every round on the symbol layers in `layers` (the per-message
/// batch is `layers.len()`).
pub fn simulate_delayed(cfg: &SystemConfig, demand: &Demand, placement: &CachePlacement, layers: Range<usize>) -> Result<DelayedRun> {
    cfg.check_simulatable()?;
    let f = cfg.field();
    let seeds = SeedTree::new(cfg.seed);
    let k = cfg.t_t + cfg.t_r;
    let need = required_batch(k, cfg.t_r + 1);
    if !layers.len().is_multiple_of(need) {
        return Err(Error::Divisibility { batch: layers.len(), required: need });
    }
    let mut rounds = Vec::new();
    let mut log = TransmissionLog::default();
    let mut retries = 0;
    if !layers.is_empty() {
        let mut round = 0;
        for t in enumerate_subsets(cfg.k_t, cfg.t_t)? {
            for s in enumerate_subsets(cfg.k_r, k)? {
                let fresh = build_order_messages(cfg, placement, demand, &t, &s, layers.clone())?;
                let engine = MatEngine::new(f, cfg.k_t, t.clone(), s.clone(), &fresh, seeds, round)?;
                let source = |slot: usize, attempt: usize| {
                    let idx = [round as u64, slot as u64, attempt as u64];
                    FieldMatrix::random(&f, cfg.k_r, cfg.k_t, &mut seeds.stream("mat_channel", &idx))
                };
                let mut r = mat_schedule(engine, fresh, layers.clone(), source)?;
                r.first_slot = log.len();
                retries += r.retries;
                for m in &r.slots {
                    let received = m.channel.mul_vec(&f, &m.transmit);
                    let equations = (1..=cfg.k_r)
                        .map(|q| combine(&f, m.antennas.iter().map(|&a| m.channel[(q - 1, a - 1)]).zip(&m.forms)))
                        .collect();
                    log.slots.push(SlotRecord {
                        slot: log.len(),
                        block: round,
                        t: t.clone(),
                        s: s.clone(),
                        kind: SlotKind::Delayed { order: m.order, audience: m.audience.clone(), streams: m.antennas.len() },
                        channel: m.channel.clone(),
                        transmit: m.transmit.clone(),
                        received,
                        equations,
                    });
                }
                rounds.push(r);
                round += 1;
            }
        }
    }

    let mut decoded = Vec::with_capacity(cfg.k_r);
    let mut ok = Vec::with_capacity(cfg.k_r);
    let mut delivered = 0;
    for q in 1..=cfg.k_r {
        let needed = placement.catalog().needed_by(q, demand);
        delivered += needed.len() * layers.len();
        let mut got = BTreeMap::new();
        let mut failed = false;
        for r in &rounds {
            match decode_round(&f, q, r, &log, placement) {
                Ok(m) => got.extend(m),
                Err(_) => failed = true,
            }
        }
        let complete = !failed
            && needed
                .iter()
                .flat_map(|&u| layers.clone().map(move |pos| UnitSym { unit: u, pos }))
                .all(|s| got.get(&s) == Some(&placement.symbol(s)));
        ok.push(complete);
        decoded.push(got);
    }
    let report = DeliveryReport::new(ok, log.len(), delivered, cfg.seed, retries);
    Ok(DelayedRun { rounds, log, decoded, report })
}

/// Runs the delayed scheme with the smallest batch that clears the
/// schedule, or `batch` symbols per message if given.
pub fn run_delayed_delivery(cfg: &SystemConfig, demand: &Demand, batch: Option<usize>) -> Result<DeliveryReport> {
    let b = batch.unwrap_or_else(|| required_batch(cfg.t_t + cfg.t_r, cfg.t_r + 1));
    let dims = derived_dimensions(cfg, b)?;
    let placement = place_caches(cfg, &dims, &SeedTree::new(cfg.seed))?;
    let run = simulate_delayed(cfg, demand, &placement, 0..b)?;
    if let Some(k) = run.report.decoded_ok.iter().position(|ok| !ok) {
        let needed = placement.catalog().needed_by(k + 1, demand).len() * b;
        return Err(Error::DecodingFailure { receiver: k + 1, missing: needed.saturating_sub(run.decoded[k].len()) });
    }
    Ok(run.report)
}
