//! Delivery with current CSIT.
//!
//! For every transmitter set T (|T| = t_t) and receiver set S
//! (|S| = t_t + t_r) the transmitters in T send a block of
//! C(t_t+t_r-1, t_r) slots. Each slot superposes, for every group
//! G of S with |G| = t_r + 1, a random combination of the group's units
//! beamformed by a precoder that is orthogonal to the channels of S \ G.
//! A receiver k in S cancels its cached partners, sees zero from every
//! group it is not part of, and solves a square system over the blocks'
//! slots.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{Fe, FieldMatrix, PrimeField};
use crate::log::{combine, DeliveryReport, LinForm, SlotKind, SlotRecord, TransmissionLog};
use crate::model::{binomial, derived_dimensions, Demand, SystemConfig};
use crate::placement::{block_unit, enumerate_subsets, place_caches, sub_subsets, CachePlacement, SubsetId, UnitSym};
use crate::rng::SeedTree;

/// Regeneration cap for precoders, channels and combination coefficients.
pub const RETRY_CAP: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Precoder {
    pub t: SubsetId,
    pub s: SubsetId,
    pub r: SubsetId,
    pub u: Vec<Fe>,
}

/// Channel vector of receiver `j` (1-based) restricted to the transmitters in `t`.
pub fn channel_row(channel: &FieldMatrix, j: usize, t: &SubsetId) -> Vec<Fe> {
    t.members().iter().map(|&l| channel[(j - 1, l - 1)]).collect()
}

/// Finds u over the transmitters in `t` with u orthogonal to every
/// channel in S \ R and not orthogonal to any channel in R. Returns the
/// precoder and the number of resamples it took.
pub fn design_precoder<G: Rng + ?Sized>(
    f: &PrimeField,
    channel: &FieldMatrix,
    t: &SubsetId,
    s: &SubsetId,
    r: &SubsetId,
    rng: &mut G,
) -> Result<(Precoder, usize)> {
    let zf = s.difference(r);
    if zf.len() >= t.len() {
        return Err(Error::Domain(format!("cannot null {} receivers with {} transmitters", zf.len(), t.len())));
    }
    let rows = if zf.is_empty() {
        FieldMatrix::empty(t.len())
    } else {
        FieldMatrix::from_rows(zf.members().iter().map(|&j| channel_row(channel, j, t)).collect())
    };
    for attempt in 0..RETRY_CAP {
        let u = rows.nullspace_sample(f, rng)?;
        if r.members().iter().all(|&j| !f.dot(&channel_row(channel, j, t), &u).is_zero()) {
            return Ok((Precoder { t: t.clone(), s: s.clone(), r: r.clone(), u }, attempt));
        }
    }
    Err(Error::GenericityFailure { what: format!("precoder for T={t} S={s} R={r}"), attempts: RETRY_CAP })
}

/// One random combination G^omega(R) as it is sent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodedSymbol {
    pub r: SubsetId,
    pub omega: usize,
    pub layer: usize,
    /// One unit per member of R, in member order.
    pub coeffs: Vec<(usize, Fe)>,
    pub value: Fe,
}

/// Everything a receiver needs to know about one block after the fact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockDesign {
    pub block: usize,
    pub layer: usize,
    pub t: SubsetId,
    pub s: SubsetId,
    pub channel: FieldMatrix,
    pub groups: Vec<SubsetId>,
    pub precoders: Vec<Precoder>,
    /// `units[g][i]`: unit carried for member i of group g.
    pub units: Vec<Vec<usize>>,
    /// `coeffs[omega][g][i]`.
    pub coeffs: Vec<Vec<Vec<Fe>>>,
    pub first_slot: usize,
    pub retries: usize,
}

impl BlockDesign {
    pub fn slots(&self) -> usize {
        self.coeffs.len()
    }
}

#[derive(Clone, Debug)]
pub struct BuiltBlock {
    pub design: BlockDesign,
    /// Transmit vector over all K_t transmitters, one per slot.
    pub transmit: Vec<Vec<Fe>>,
    pub coded: Vec<CodedSymbol>,
}

/// Identifies a block for the keyed random draws.
#[derive(Clone, Copy, Debug)]
pub struct BlockKey {
    pub block: usize,
    pub layer: usize,
    pub attempt: usize,
}

fn draw_coeffs(f: &PrimeField, seeds: &SeedTree, key: BlockKey, c_attempt: usize, omegas: usize, sizes: &[usize]) -> Vec<Vec<Vec<Fe>>> {
    (0..omegas)
        .map(|w| {
            sizes
                .iter()
                .enumerate()
                .map(|(g, &n)| {
                    (0..n)
                        .map(|i| {
                            let idx = [key.block, key.layer, key.attempt, c_attempt, w, g, i].map(|x| x as u64);
                            f.random_nonzero(&mut seeds.stream("combine", &idx))
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Decoding matrix of receiver `k` for a block: rows are slots, columns
/// the groups containing k.
fn receiver_matrix(f: &PrimeField, d: &BlockDesign, k: usize) -> (FieldMatrix, Vec<usize>) {
    let mine: Vec<usize> = (0..d.groups.len()).filter(|&g| d.groups[g].contains(k)).collect();
    let h = channel_row(&d.channel, k, &d.t);
    let mut m = FieldMatrix::zeros(d.slots(), mine.len());
    for (w, row) in d.coeffs.iter().enumerate() {
        for (c, &g) in mine.iter().enumerate() {
            let pos = d.groups[g].members().iter().position(|&x| x == k).expect("k in group");
            m[(w, c)] = f.mul(f.dot(&h, &d.precoders[g].u), row[g][pos]);
        }
    }
    (m, mine)
}

#[allow(clippy::too_many_arguments)]
pub fn build_block(
    cfg: &SystemConfig,
    placement: &CachePlacement,
    demand: &Demand,
    t: &SubsetId,
    s: &SubsetId,
    channel: &FieldMatrix,
    key: BlockKey,
    seeds: &SeedTree,
) -> Result<BuiltBlock> {
    let f = cfg.field();
    if t.len() != cfg.t_t || s.len() != cfg.t_t + cfg.t_r {
        return Err(Error::Domain(format!("block sizes |T| = {}, |S| = {}", t.len(), s.len())));
    }
    let groups = sub_subsets(s, cfg.t_r + 1)?;
    let omegas = binomial((cfg.t_t + cfg.t_r - 1) as i64, cfg.t_r as i64) as usize;
    let mut retries = 0;
    let mut precoders = Vec::with_capacity(groups.len());
    for (g, r) in groups.iter().enumerate() {
        let mut rng = seeds.stream("precoder", &[key.block as u64, key.layer as u64, key.attempt as u64, g as u64]);
        let (p, tries) = design_precoder(&f, channel, t, s, r, &mut rng)?;
        retries += tries;
        precoders.push(p);
    }
    let units: Vec<Vec<usize>> = groups
        .iter()
        .map(|g| {
            g.members()
                .iter()
                .map(|&r| block_unit(placement.catalog(), cfg.k_r, demand.file(r - 1), t, s, g, r))
                .collect()
        })
        .collect();
    let sizes: Vec<usize> = groups.iter().map(SubsetId::len).collect();

    let mut design = BlockDesign {
        block: key.block,
        layer: key.layer,
        t: t.clone(),
        s: s.clone(),
        channel: channel.clone(),
        groups,
        precoders,
        units,
        coeffs: Vec::new(),
        first_slot: 0,
        retries: 0,
    };
    let mut solvable = false;
    for c_attempt in 0..RETRY_CAP {
        design.coeffs = draw_coeffs(&f, seeds, key, c_attempt, omegas, &sizes);
        if s.members().iter().all(|&k| receiver_matrix(&f, &design, k).0.is_invertible(&f)) {
            solvable = true;
            break;
        }
        retries += 1;
    }
    if !solvable {
        return Err(Error::SingularSystem(format!("block T={t} S={s}: combinations stay dependent")));
    }
    design.retries = retries;

    let mut transmit = Vec::with_capacity(omegas);
    let mut coded = Vec::new();
    for w in 0..omegas {
        let mut x = vec![Fe::ZERO; cfg.k_t];
        for (g, r) in design.groups.iter().enumerate() {
            let coeffs: Vec<(usize, Fe)> = design.units[g].iter().copied().zip(design.coeffs[w][g].iter().copied()).collect();
            let value = coeffs.iter().fold(Fe::ZERO, |acc, &(u, c)| f.mul_add(acc, c, placement.payload(u)[key.layer]));
            for (i, &l) in t.members().iter().enumerate() {
                x[l - 1] = f.mul_add(x[l - 1], design.precoders[g].u[i], value);
            }
            coded.push(CodedSymbol { r: r.clone(), omega: w, layer: key.layer, coeffs, value });
        }
        transmit.push(x);
    }
    Ok(BuiltBlock { design, transmit, coded })
}

/// Received value of every receiver in a block slot, and the matching
/// linear forms over unit symbols.
fn slot_equations(f: &PrimeField, d: &BlockDesign, w: usize, k_r: usize) -> Vec<LinForm> {
    let group_forms: Vec<LinForm> = (0..d.groups.len())
        .map(|g| {
            let m = d.units[g]
                .iter()
                .zip(&d.coeffs[w][g])
                .map(|(&u, &c)| (UnitSym { unit: u, pos: d.layer }, c))
                .fold(BTreeMap::new(), |mut acc, (s, c)| {
                    let e = acc.entry(s).or_insert(Fe::ZERO);
                    *e = f.add(*e, c);
                    acc
                });
            LinForm::from_map(m)
        })
        .collect();
    (1..=k_r)
        .map(|k| {
            let h = channel_row(&d.channel, k, &d.t);
            combine(f, (0..d.groups.len()).map(|g| (f.dot(&h, &d.precoders[g].u), &group_forms[g])))
        })
        .collect()
}

/// Output of a full-CSIT run over a range of symbol layers.
#[derive(Clone, Debug)]
pub struct FullRun {
    pub blocks: Vec<BlockDesign>,
    pub log: TransmissionLog,
    pub decoded: Vec<BTreeMap<UnitSym, Fe>>,
    pub report: DeliveryReport,
}

/// Runs every (T, S) block for each symbol layer in `layers`; each
/// (block, layer) pair is its own coherence block with a fresh channel.
pub fn simulate_full(cfg: &SystemConfig, demand: &Demand, placement: &CachePlacement, layers: Range<usize>) -> Result<FullRun> {
    cfg.check_simulatable()?;
    let f = cfg.field();
    let seeds = SeedTree::new(cfg.seed);
    let ts = enumerate_subsets(cfg.k_t, cfg.t_t)?;
    let ss = enumerate_subsets(cfg.k_r, cfg.t_t + cfg.t_r)?;
    let mut blocks = Vec::new();
    let mut log = TransmissionLog::default();
    let mut retries = 0;
    let mut block = 0;
    for t in &ts {
        for s in &ss {
            for layer in layers.clone() {
                let mut built = None;
                for attempt in 0..RETRY_CAP {
                    let mut rng = seeds.stream("channel", &[block as u64, layer as u64, attempt as u64]);
                    let channel = FieldMatrix::random(&f, cfg.k_r, cfg.k_t, &mut rng);
                    let key = BlockKey { block, layer, attempt };
                    match build_block(cfg, placement, demand, t, s, &channel, key, &seeds) {
                        Ok(b) => {
                            retries += attempt;
                            built = Some(b);
                            break;
                        }
                        Err(Error::GenericityFailure { .. } | Error::SingularSystem(_)) => continue,
                        Err(e) => return Err(e),
                    }
                }
                let mut b = built.ok_or_else(|| Error::GenericityFailure { what: format!("channel for T={t} S={s}"), attempts: RETRY_CAP })?;
                b.design.first_slot = log.len();
                retries += b.design.retries;
                for (w, x) in b.transmit.iter().enumerate() {
                    let received = b.design.channel.mul_vec(&f, x);
                    log.slots.push(SlotRecord {
                        slot: log.len(),
                        block,
                        t: t.clone(),
                        s: s.clone(),
                        kind: SlotKind::Full {
                            layer,
                            omega: w,
                            precoders: b.design.precoders.iter().map(|p| (p.r.clone(), p.u.clone())).collect(),
                        },
                        channel: b.design.channel.clone(),
                        transmit: x.clone(),
                        received,
                        equations: slot_equations(&f, &b.design, w, cfg.k_r),
                    });
                }
                blocks.push(b.design);
            }
            block += 1;
        }
    }

    let mut decoded = Vec::with_capacity(cfg.k_r);
    let mut ok = Vec::with_capacity(cfg.k_r);
    let mut delivered = 0;
    for k in 1..=cfg.k_r {
        let needed = placement.catalog().needed_by(k, demand);
        delivered += needed.len() * layers.len();
        let got = decode_receiver(&f, k, &blocks, &log, placement).unwrap_or_default();
        let complete = needed
            .iter()
            .flat_map(|&u| layers.clone().map(move |pos| UnitSym { unit: u, pos }))
            .all(|s| got.get(&s) == Some(&placement.symbol(s)));
        ok.push(complete);
        decoded.push(got);
    }
    let report = DeliveryReport::new(ok, log.len(), delivered, cfg.seed, retries);
    Ok(FullRun { blocks, log, decoded, report })
}

/// Structured decoder: per block containing `k`, cancel the cached
/// partners and solve the slot-by-group system for k's own units.
pub fn decode_receiver(
    f: &PrimeField,
    k: usize,
    blocks: &[BlockDesign],
    log: &TransmissionLog,
    placement: &CachePlacement,
) -> Result<BTreeMap<UnitSym, Fe>> {
    let mut out = BTreeMap::new();
    for d in blocks.iter().filter(|d| d.s.contains(k)) {
        let h = channel_row(&d.channel, k, &d.t);
        for (g, grp) in d.groups.iter().enumerate() {
            if !grp.contains(k) && !f.dot(&h, &d.precoders[g].u).is_zero() {
                return Err(Error::SingularSystem(format!("group {grp} leaks into receiver {k}")));
            }
        }
        let (m, mine) = receiver_matrix(f, d, k);
        let mut rhs = Vec::with_capacity(d.slots());
        for w in 0..d.slots() {
            let mut y = log.slots[d.first_slot + w].received[k - 1];
            for &g in &mine {
                let gain = f.dot(&h, &d.precoders[g].u);
                for (i, &r) in d.groups[g].members().iter().enumerate() {
                    if r == k {
                        continue;
                    }
                    let u = d.units[g][i];
                    if !placement.rx_has(k, u) {
                        return Err(Error::SingularSystem(format!("receiver {k} lacks cached partner unit {u}")));
                    }
                    let term = f.mul(f.mul(gain, d.coeffs[w][g][i]), placement.payload(u)[d.layer]);
                    y = f.sub(y, term);
                }
            }
            rhs.push(y);
        }
        let x = m.solve(f, &rhs).map_err(|_| Error::SingularSystem(format!("receiver {k}, block {}", d.block)))?;
        for (c, &g) in mine.iter().enumerate() {
            let i = d.groups[g].members().iter().position(|&r| r == k).expect("k in group");
            out.insert(UnitSym { unit: d.units[g][i], pos: d.layer }, x[c]);
        }
    }
    Ok(out)
}

/// Runs the full-CSIT scheme with one symbol per minifile and fails if
/// any receiver cannot decode.
pub fn run_full_delivery(cfg: &SystemConfig, demand: &Demand) -> Result<DeliveryReport> {
    let dims = derived_dimensions(cfg, 1)?;
    let placement = place_caches(cfg, &dims, &SeedTree::new(cfg.seed))?;
    let run = simulate_full(cfg, demand, &placement, 0..1)?;
    if let Some(k) = run.report.decoded_ok.iter().position(|ok| !ok) {
        let needed = placement.catalog().needed_by(k + 1, demand).len();
        return Err(Error::DecodingFailure { receiver: k + 1, missing: needed.saturating_sub(run.decoded[k].len()) });
    }
    Ok(run.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratio::int;

    fn setup(kt: usize, kr: usize, n: usize, tt: usize, tr: usize, seed: u64) -> (SystemConfig, Demand, CachePlacement) {
        let cfg = SystemConfig::from_t(kt, kr, n, tt, tr, seed).unwrap();
        let demand = Demand::round_robin(&cfg);
        let placement = place_caches(&cfg, &derived_dimensions(&cfg, 1).unwrap(), &SeedTree::new(seed)).unwrap();
        (cfg, demand, placement)
    }

    fn sub(k: usize, m: &[usize]) -> SubsetId {
        SubsetId::new(k, m.to_vec()).unwrap()
    }

    #[test]
    fn precoder_single_transmitter() {
        let f = PrimeField::new(crate::field::MERSENNE_61).unwrap();
        let mut rng = SeedTree::new(1).stream("t", &[]);
        let h = FieldMatrix::random(&f, 2, 1, &mut rng);
        let (p, _) = design_precoder(&f, &h, &sub(1, &[1]), &sub(2, &[2]), &sub(2, &[2]), &mut rng).unwrap();
        assert_eq!(p.u.len(), 1);
        assert!(!p.u[0].is_zero());
    }

    #[test]
    fn precoder_nulls_and_reaches() {
        let f = PrimeField::new(crate::field::MERSENNE_61).unwrap();
        let mut rng = SeedTree::new(2).stream("t", &[]);
        let h = FieldMatrix::random(&f, 3, 2, &mut rng);
        let t = sub(2, &[1, 2]);
        let s = sub(3, &[1, 2, 3]);
        let r = sub(3, &[1, 3]);
        let (p, _) = design_precoder(&f, &h, &t, &s, &r, &mut rng).unwrap();
        assert!(f.dot(&channel_row(&h, 2, &t), &p.u).is_zero());
        assert!(!f.dot(&channel_row(&h, 1, &t), &p.u).is_zero());
        assert!(!f.dot(&channel_row(&h, 3, &t), &p.u).is_zero());
    }

    #[test]
    fn precoder_with_zero_row() {
        let f = PrimeField::new(crate::field::MERSENNE_61).unwrap();
        let mut rng = SeedTree::new(3).stream("t", &[]);
        let mut h = FieldMatrix::random(&f, 3, 2, &mut rng);
        h[(1, 0)] = Fe::ZERO;
        h[(1, 1)] = Fe::ZERO;
        let t = sub(2, &[1, 2]);
        let (p, _) = design_precoder(&f, &h, &t, &sub(3, &[1, 2, 3]), &sub(3, &[1, 3]), &mut rng).unwrap();
        assert!(!f.dot(&channel_row(&h, 1, &t), &p.u).is_zero());
    }

    #[test]
    fn precoder_fails_on_degenerate_channel() {
        let f = PrimeField::new(7).unwrap();
        let mut rng = SeedTree::new(4).stream("t", &[]);
        // receivers 1 and 2 share a channel: nulling 2 always nulls 1
        let h = FieldMatrix::from_rows(vec![vec![Fe(1), Fe(2)], vec![Fe(1), Fe(2)], vec![Fe(3), Fe(5)]]);
        let e = design_precoder(&f, &h, &sub(2, &[1, 2]), &sub(3, &[1, 2, 3]), &sub(3, &[1, 3]), &mut rng).unwrap_err();
        assert!(matches!(e, Error::GenericityFailure { .. }));
    }

    #[test]
    fn block_shapes() {
        for (kt, kr, n, tt, tr, slots, groups) in [(2, 3, 3, 2, 1, 2, 3), (1, 1, 1, 1, 0, 1, 1), (2, 2, 2, 2, 0, 1, 2)] {
            let (cfg, demand, placement) = setup(kt, kr, n, tt, tr, 5);
            let seeds = SeedTree::new(5);
            let f = cfg.field();
            let ch = FieldMatrix::random(&f, kr, kt, &mut seeds.stream("c", &[]));
            let t = enumerate_subsets(kt, tt).unwrap().remove(0);
            let s = enumerate_subsets(kr, tt + tr).unwrap().remove(0);
            let b = build_block(&cfg, &placement, &demand, &t, &s, &ch, BlockKey { block: 0, layer: 0, attempt: 0 }, &seeds).unwrap();
            assert_eq!(b.transmit.len(), slots);
            assert_eq!(b.coded.len(), slots * groups);
            assert!(b.coded.iter().all(|c| c.coeffs.len() == tr + 1));
            // support only on T
            for x in &b.transmit {
                for l in 1..=kt {
                    if !t.contains(l) {
                        assert!(x[l - 1].is_zero());
                    }
                }
            }
        }
    }

    #[test]
    fn zero_forcing_is_exact() {
        let (cfg, demand, placement) = setup(3, 4, 4, 2, 2, 9);
        let run = simulate_full(&cfg, &demand, &placement, 0..1).unwrap();
        let f = cfg.field();
        for d in &run.blocks {
            for (g, grp) in d.groups.iter().enumerate() {
                for &j in d.s.difference(grp).members() {
                    assert!(f.dot(&channel_row(&d.channel, j, &d.t), &d.precoders[g].u).is_zero());
                }
            }
        }
    }

    #[test]
    fn received_values_match_equations() {
        let (cfg, demand, placement) = setup(2, 3, 3, 2, 1, 1);
        let run = simulate_full(&cfg, &demand, &placement, 0..1).unwrap();
        let f = cfg.field();
        for s in &run.log.slots {
            for k in 0..cfg.k_r {
                assert_eq!(s.equations[k].eval(&f, |u| placement.symbol(u)), s.received[k]);
            }
        }
    }

    #[test]
    fn end_to_end_examples() {
        for (kt, kr, n, tt, tr, dof) in [(2, 2, 2, 1, 1, 2), (2, 3, 3, 2, 1, 3), (2, 2, 2, 2, 0, 2)] {
            let cfg = SystemConfig::from_t(kt, kr, n, tt, tr, 7).unwrap();
            let rep = run_full_delivery(&cfg, &Demand::round_robin(&cfg)).unwrap();
            assert!(rep.all_decoded());
            assert_eq!(rep.empirical_dof, Some(int(dof)));
            let expect = binomial(kt as i64, tt as i64) * binomial(kr as i64, (tt + tr) as i64) * binomial((tt + tr - 1) as i64, tr as i64);
            assert_eq!(rep.slot_count as u64, expect);
        }
    }

    #[test]
    fn unserved_receivers_get_nothing_from_block() {
        let (cfg, demand, placement) = setup(2, 4, 4, 1, 1, 3);
        let run = simulate_full(&cfg, &demand, &placement, 0..1).unwrap();
        let f = cfg.field();
        let only_one = vec![run.blocks[0].clone()];
        let k_out = (1..=4).find(|&k| !run.blocks[0].s.contains(k)).unwrap();
        assert!(decode_receiver(&f, k_out, &only_one, &run.log, &placement).unwrap().is_empty());
    }

    #[test]
    fn simulation_rejects_oversized_cache_sum() {
        let cfg = SystemConfig::from_t(2, 2, 2, 2, 1, 0).unwrap();
        assert!(run_full_delivery(&cfg, &Demand::round_robin(&cfg)).is_err());
    }
}
