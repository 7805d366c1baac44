//! Transmission records shared by both delivery algorithms, the delivery
//! report, and the brute-force decoder that works from records alone.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::field::{Fe, FieldMatrix, PrimeField};
use crate::placement::{SubsetId, UnitSym};
use crate::ratio::{exact, Rational};

/// Sparse linear form over unit symbols; sorted, no zero coefficients.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinForm(Vec<(UnitSym, Fe)>);

impl LinForm {
    pub fn unit(s: UnitSym) -> Self {
        Self(vec![(s, Fe::ONE)])
    }

    pub fn from_map(m: BTreeMap<UnitSym, Fe>) -> Self {
        Self(m.into_iter().filter(|(_, c)| !c.is_zero()).collect())
    }

    pub fn terms(&self) -> &[(UnitSym, Fe)] {
        &self.0
    }

    pub fn coeff(&self, s: UnitSym) -> Fe {
        self.0.binary_search_by(|(k, _)| k.cmp(&s)).map(|i| self.0[i].1).unwrap_or(Fe::ZERO)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    /// Accumulates `scale * self` into `acc`.
    pub fn add_scaled_into(&self, f: &PrimeField, scale: Fe, acc: &mut BTreeMap<UnitSym, Fe>) {
        if scale.is_zero() {
            return;
        }
        for &(s, c) in &self.0 {
            let e = acc.entry(s).or_insert(Fe::ZERO);
            *e = f.mul_add(*e, scale, c);
        }
    }

    pub fn eval(&self, f: &PrimeField, value: impl Fn(UnitSym) -> Fe) -> Fe {
        self.0.iter().fold(Fe::ZERO, |acc, &(s, c)| f.mul_add(acc, c, value(s)))
    }

    /// Validates ordering and nonzero coefficients (used on parsed input).
    pub fn is_canonical(&self, p: u64) -> bool {
        self.0.windows(2).all(|w| w[0].0 < w[1].0) && self.0.iter().all(|(_, c)| c.0 != 0 && c.0 < p)
    }
}

/// Linear combination of forms with field coefficients.
pub fn combine<'a>(f: &PrimeField, parts: impl IntoIterator<Item = (Fe, &'a LinForm)>) -> LinForm {
    let mut acc = BTreeMap::new();
    for (c, form) in parts {
        form.add_scaled_into(f, c, &mut acc);
    }
    LinForm::from_map(acc)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SlotKind {
    /// Zero-forcing slot of a full-CSIT block; `precoders` pairs each coded
    /// group with its vector over the block's transmitters.
    Full { layer: usize, omega: usize, precoders: Vec<(SubsetId, Vec<Fe>)> },
    /// Retrospective slot carrying order-`order` symbols for `audience`.
    Delayed { order: usize, audience: SubsetId, streams: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: usize,
    pub block: usize,
    pub t: SubsetId,
    pub s: SubsetId,
    pub kind: SlotKind,
    pub channel: FieldMatrix,
    pub transmit: Vec<Fe>,
    pub received: Vec<Fe>,
    /// Per receiver: the received value as a form over unit symbols.
    pub equations: Vec<LinForm>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TransmissionLog {
    pub slots: Vec<SlotRecord>,
}

impl TransmissionLog {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Receiver `k` (1-based) equations as (form, received value).
    pub fn equations_of(&self, k: usize) -> Vec<(&LinForm, Fe)> {
        self.slots.iter().map(|s| (&s.equations[k - 1], s.received[k - 1])).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DeliveryReport {
    pub decoded_ok: Vec<bool>,
    pub slot_count: usize,
    pub symbols_delivered: usize,
    #[serde(serialize_with = "ser_opt_exact")]
    pub empirical_dof: Option<Rational>,
    pub seed: u64,
    pub retries: usize,
}

fn ser_opt_exact<S: serde::Serializer>(r: &Option<Rational>, s: S) -> Result<S::Ok, S::Error> {
    match r {
        Some(r) => s.serialize_str(&exact(r)),
        None => s.serialize_none(),
    }
}

impl DeliveryReport {
    pub fn new(decoded_ok: Vec<bool>, slot_count: usize, symbols_delivered: usize, seed: u64, retries: usize) -> Self {
        let empirical_dof = (decoded_ok.iter().all(|&b| b) && slot_count > 0)
            .then(|| Rational::new(symbols_delivered.into(), slot_count.into()));
        Self { decoded_ok, slot_count, symbols_delivered, empirical_dof, seed, retries }
    }

    pub fn all_decoded(&self) -> bool {
        self.decoded_ok.iter().all(|&b| b)
    }

    /// Slot-wise concatenation of two independent runs.
    pub fn merge(&self, other: &DeliveryReport) -> DeliveryReport {
        let ok = self.decoded_ok.iter().zip(&other.decoded_ok).map(|(a, b)| *a && *b).collect();
        DeliveryReport::new(
            ok,
            self.slot_count + other.slot_count,
            self.symbols_delivered + other.symbols_delivered,
            self.seed,
            self.retries + other.retries,
        )
    }
}

/// Solves a receiver's whole equation set by Gaussian elimination with
/// `known` symbols substituted, returning every unknown that the system
/// pins down uniquely.
pub fn eliminate(f: &PrimeField, equations: &[(&LinForm, Fe)], known: &BTreeMap<UnitSym, Fe>) -> BTreeMap<UnitSym, Fe> {
    let unknowns: Vec<UnitSym> = equations
        .iter()
        .flat_map(|(form, _)| form.terms().iter().map(|(s, _)| *s))
        .filter(|s| !known.contains_key(s))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if unknowns.is_empty() {
        return BTreeMap::new();
    }
    let col: BTreeMap<UnitSym, usize> = unknowns.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let n = unknowns.len();
    let mut m = FieldMatrix::zeros(equations.len(), n + 1);
    for (row, (form, value)) in equations.iter().enumerate() {
        let mut rhs = *value;
        for &(s, c) in form.terms() {
            match known.get(&s) {
                Some(&v) => rhs = f.sub(rhs, f.mul(c, v)),
                None => m[(row, col[&s])] = c,
            }
        }
        m[(row, n)] = rhs;
    }
    let pivots = m.rref(f);
    let pivot_set: BTreeSet<usize> = pivots.iter().copied().collect();
    let mut out = BTreeMap::new();
    for (row, &pc) in pivots.iter().enumerate() {
        if pc == n {
            // inconsistent system; nothing beyond this row is meaningful
            break;
        }
        let free_clear = (0..n).filter(|c| !pivot_set.contains(c)).all(|c| m[(row, c)].is_zero());
        if free_clear {
            out.insert(unknowns[pc], m[(row, n)]);
        }
    }
    out
}
