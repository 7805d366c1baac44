//! Library splitting and cache filling.
//!
//! File n is cut into subfiles indexed by a t_t-subset T of transmitters
//! and a t_r-subset R of receivers, and each subfile into minifiles
//! indexed by a (t_t-1)-subset R' of [K_r - t_r - 1]. Transmitter l holds
//! every unit with l in T; receiver k holds every unit with k in R.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Fe;
use crate::model::{binomial, Demand, Dimensions, SystemConfig};
use crate::rng::SeedTree;

/// A subset of `[ground]` (1-based), kept sorted.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawSubset")]
pub struct SubsetId {
    ground: usize,
    members: Vec<usize>,
}

#[derive(Deserialize)]
struct RawSubset {
    ground: usize,
    members: Vec<usize>,
}

impl TryFrom<RawSubset> for SubsetId {
    type Error = String;

    fn try_from(r: RawSubset) -> std::result::Result<Self, String> {
        if !r.members.windows(2).all(|w| w[0] < w[1]) {
            return Err(format!("subset members {:?} are not strictly increasing", r.members));
        }
        SubsetId::new(r.ground, r.members).map_err(|e| e.to_string())
    }
}

impl SubsetId {
    pub fn new(ground: usize, mut members: Vec<usize>) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        if members.iter().any(|&m| m == 0 || m > ground) {
            return Err(Error::OutOfRange(format!("subset {members:?} of [{ground}]")));
        }
        Ok(Self { ground, members })
    }

    pub fn empty(ground: usize) -> Self {
        Self { ground, members: Vec::new() }
    }

    pub fn ground(&self) -> usize {
        self.ground
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, x: usize) -> bool {
        self.members.binary_search(&x).is_ok()
    }

    pub fn without(&self, x: usize) -> Self {
        Self { ground: self.ground, members: self.members.iter().copied().filter(|&m| m != x).collect() }
    }

    pub fn with(&self, x: usize) -> Self {
        let mut members = self.members.clone();
        if let Err(pos) = members.binary_search(&x) {
            members.insert(pos, x);
        }
        Self { ground: self.ground, members }
    }

    pub fn union(&self, other: &Self) -> Self {
        let members: BTreeSet<usize> = self.members.iter().chain(&other.members).copied().collect();
        Self { ground: self.ground, members: members.into_iter().collect() }
    }

    pub fn difference(&self, other: &Self) -> Self {
        Self { ground: self.ground, members: self.members.iter().copied().filter(|m| !other.contains(*m)).collect() }
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.members.iter().all(|&m| other.contains(m))
    }
}

impl fmt::Display for SubsetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, m) in self.members.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{m}")?;
        }
        write!(f, "}}")
    }
}

/// All t-subsets of [k] in lexicographic order of their sorted members.
pub fn enumerate_subsets(k: usize, t: usize) -> Result<Vec<SubsetId>> {
    if t > k {
        return Err(Error::Domain(format!("cannot choose {t} of {k}")));
    }
    let mut out = Vec::with_capacity(binomial(k as i64, t as i64) as usize);
    let mut cur: Vec<usize> = (1..=t).collect();
    loop {
        out.push(SubsetId { ground: k, members: cur.clone() });
        let Some(i) = (0..t).rev().find(|&i| cur[i] < k - t + i + 1) else {
            return Ok(out);
        };
        cur[i] += 1;
        for j in i + 1..t {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Subsets of `within` of size t, lexicographic.
pub fn sub_subsets(within: &SubsetId, t: usize) -> Result<Vec<SubsetId>> {
    Ok(enumerate_subsets(within.len(), t)?
        .into_iter()
        .map(|s| SubsetId {
            ground: within.ground,
            members: s.members.iter().map(|&i| within.members[i - 1]).collect(),
        })
        .collect())
}

/// The idx-th smallest element of [k] \ U (idx is 1-based).
pub fn complement_bijection(k: usize, u: &SubsetId, idx: usize) -> Result<usize> {
    let max = k - u.len();
    if idx == 0 || idx > max {
        return Err(Error::IndexOutOfRange { idx, max });
    }
    Ok((1..=k).filter(|x| !u.contains(*x)).nth(idx - 1).expect("within complement"))
}

/// Inverse of [`complement_bijection`], applied element-wise to a set.
pub fn complement_preimage(k: usize, u: &SubsetId, image: &SubsetId) -> Result<SubsetId> {
    let comp: Vec<usize> = (1..=k).filter(|x| !u.contains(*x)).collect();
    let members = image
        .members
        .iter()
        .map(|x| {
            comp.iter()
                .position(|c| c == x)
                .map(|p| p + 1)
                .ok_or_else(|| Error::Domain(format!("{x} lies in the excluded set {u}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SubsetId { ground: comp.len(), members })
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MinifileId {
    /// 1-based file index.
    pub n: usize,
    pub t: SubsetId,
    pub r: SubsetId,
    pub rp: SubsetId,
}

impl fmt::Display for MinifileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "W[{},T={},R={}]^{}", self.n, self.t, self.r, self.rp)
    }
}

/// One symbol of one minifile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnitSym {
    pub unit: usize,
    pub pos: usize,
}

/// Canonical dense numbering of every minifile.
#[derive(Clone, Debug)]
pub struct UnitCatalog {
    ids: Vec<MinifileId>,
    index: HashMap<MinifileId, usize>,
}

impl UnitCatalog {
    pub fn new(cfg: &SystemConfig) -> Result<Self> {
        cfg.check_simulatable()?;
        let ts = enumerate_subsets(cfg.k_t, cfg.t_t)?;
        let rs = enumerate_subsets(cfg.k_r, cfg.t_r)?;
        let rps = enumerate_subsets(cfg.k_r - cfg.t_r - 1, cfg.t_t - 1)?;
        let mut ids = Vec::with_capacity(cfg.n_files * ts.len() * rs.len() * rps.len());
        for n in 1..=cfg.n_files {
            for t in &ts {
                for r in &rs {
                    for rp in &rps {
                        ids.push(MinifileId { n, t: t.clone(), r: r.clone(), rp: rp.clone() });
                    }
                }
            }
        }
        let index = ids.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect();
        Ok(Self { ids, index })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, i: usize) -> &MinifileId {
        &self.ids[i]
    }

    pub fn index_of(&self, id: &MinifileId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn ids(&self) -> &[MinifileId] {
        &self.ids
    }

    /// Units that receiver `k` (1-based) must obtain over the air.
    pub fn needed_by(&self, k: usize, demand: &Demand) -> Vec<usize> {
        let file = demand.file(k - 1);
        (0..self.ids.len()).filter(|&i| self.ids[i].n == file && !self.ids[i].r.contains(k)).collect()
    }
}

/// The unit of file `n` that block (T, S) carries for the coded group
/// `group` (|group| = t_r + 1) and its member `r`: cached at `group \ {r}`,
/// zero-forced at `S \ group`.
pub fn block_unit(cat: &UnitCatalog, k_r: usize, n: usize, t: &SubsetId, s: &SubsetId, group: &SubsetId, r: usize) -> usize {
    let rp = complement_preimage(k_r, group, &s.difference(group)).expect("S \\ group avoids group");
    let id = MinifileId { n, t: t.clone(), r: group.without(r), rp };
    cat.index_of(&id).expect("block unit exists in catalog")
}

#[derive(Clone, Debug)]
pub struct CachePlacement {
    catalog: UnitCatalog,
    pub tx_cache: Vec<BTreeSet<usize>>,
    pub rx_cache: Vec<BTreeSet<usize>>,
    payload: Vec<Vec<Fe>>,
}

impl CachePlacement {
    pub fn catalog(&self) -> &UnitCatalog {
        &self.catalog
    }

    pub fn payload(&self, unit: usize) -> &[Fe] {
        &self.payload[unit]
    }

    pub fn symbol(&self, s: UnitSym) -> Fe {
        self.payload[s.unit][s.pos]
    }

    pub fn symbols_per_unit(&self) -> usize {
        self.payload.first().map_or(0, Vec::len)
    }

    /// Receiver `k` (1-based) holds `unit`.
    pub fn rx_has(&self, k: usize, unit: usize) -> bool {
        self.rx_cache[k - 1].contains(&unit)
    }

    /// Holders of `unit`: (transmitters, receivers), 1-based.
    pub fn holders(&self, unit: usize) -> (Vec<usize>, Vec<usize>) {
        let tx = (0..self.tx_cache.len()).filter(|&l| self.tx_cache[l].contains(&unit)).map(|l| l + 1).collect();
        let rx = (0..self.rx_cache.len()).filter(|&k| self.rx_cache[k].contains(&unit)).map(|k| k + 1).collect();
        (tx, rx)
    }

    /// Every cached symbol of receiver `k` (1-based).
    pub fn rx_known(&self, k: usize) -> BTreeMap<UnitSym, Fe> {
        self.rx_cache[k - 1]
            .iter()
            .flat_map(|&u| self.payload[u].iter().enumerate().map(move |(pos, &v)| (UnitSym { unit: u, pos }, v)))
            .collect()
    }
}

pub fn place_caches(cfg: &SystemConfig, dims: &Dimensions, seeds: &SeedTree) -> Result<CachePlacement> {
    let catalog = UnitCatalog::new(cfg)?;
    debug_assert_eq!(catalog.len(), dims.total_units);
    let f = cfg.field();
    let mut tx_cache = vec![BTreeSet::new(); cfg.k_t];
    let mut rx_cache = vec![BTreeSet::new(); cfg.k_r];
    let mut payload = Vec::with_capacity(catalog.len());
    for (i, id) in catalog.ids().iter().enumerate() {
        for &l in id.t.members() {
            tx_cache[l - 1].insert(i);
        }
        for &k in id.r.members() {
            rx_cache[k - 1].insert(i);
        }
        // one stream per symbol so payloads do not depend on the batch size
        let unit = (0..dims.symbols_per_minifile)
            .map(|pos| f.random(&mut seeds.stream("payload", &[i as u64, pos as u64])))
            .collect();
        payload.push(unit);
    }
    Ok(CachePlacement { catalog, tx_cache, rx_cache, payload })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Node {
    Tx(usize),
    Rx(usize),
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Tx(l) => write!(f, "tx {l}"),
            Node::Rx(k) => write!(f, "rx {k}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// The node stores units outside its cache budget.
    Budget { node: Node, expected: usize, actual: usize },
    /// A unit the placement rule assigns to the node is absent.
    Membership { node: Node, missing: Vec<usize> },
}

pub fn verify_placement(p: &CachePlacement, cfg: &SystemConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut check = |node: Node, actual: &BTreeSet<usize>, rule: &dyn Fn(&MinifileId) -> bool| {
        let expected: BTreeSet<usize> = (0..p.catalog.len()).filter(|&i| rule(p.catalog.id(i))).collect();
        if actual.iter().any(|u| !expected.contains(u)) {
            out.push(Violation::Budget { node: node.clone(), expected: expected.len(), actual: actual.len() });
        }
        let missing: Vec<usize> = expected.difference(actual).copied().collect();
        if !missing.is_empty() {
            out.push(Violation::Membership { node, missing });
        }
    };
    for l in 1..=cfg.k_t {
        check(Node::Tx(l), &p.tx_cache[l - 1], &|id| id.t.contains(l));
    }
    for k in 1..=cfg.k_r {
        check(Node::Rx(k), &p.rx_cache[k - 1], &|id| id.r.contains(k));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::derived_dimensions;
    use crate::ratio::{frac, Rational};

    fn s(k: usize, m: &[usize]) -> SubsetId {
        SubsetId::new(k, m.to_vec()).unwrap()
    }

    #[test]
    fn subset_enumeration() {
        assert_eq!(enumerate_subsets(3, 2).unwrap(), vec![s(3, &[1, 2]), s(3, &[1, 3]), s(3, &[2, 3])]);
        assert_eq!(enumerate_subsets(5, 0).unwrap(), vec![SubsetId::empty(5)]);
        let six = enumerate_subsets(4, 2).unwrap();
        assert_eq!(six.len(), 6);
        assert_eq!(six[0], s(4, &[1, 2]));
        assert_eq!(six[5], s(4, &[3, 4]));
        assert!(enumerate_subsets(2, 3).is_err());
        for k in 0..7 {
            for t in 0..=k {
                let all = enumerate_subsets(k, t).unwrap();
                assert_eq!(all.len() as u64, binomial(k as i64, t as i64));
                assert!(all.windows(2).all(|w| w[0].members() < w[1].members()));
            }
        }
    }

    #[test]
    fn bijection_examples() {
        let u = s(4, &[2]);
        let img: Vec<_> = (1..=3).map(|i| complement_bijection(4, &u, i).unwrap()).collect();
        assert_eq!(img, vec![1, 3, 4]);
        for i in 1..=5 {
            assert_eq!(complement_bijection(5, &SubsetId::empty(5), i).unwrap(), i);
        }
        assert_eq!(complement_bijection(6, &s(6, &[1, 2, 3]), 2).unwrap(), 5);
        assert_eq!(complement_bijection(4, &u, 4), Err(Error::IndexOutOfRange { idx: 4, max: 3 }));
        assert!(complement_bijection(4, &u, 0).is_err());
        let pre = complement_preimage(6, &s(6, &[1, 2, 3]), &s(6, &[4, 6])).unwrap();
        assert_eq!(pre.members(), &[1, 3]);
        assert!(complement_preimage(6, &s(6, &[1, 2, 3]), &s(6, &[2])).is_err());
    }

    fn placed(kt: usize, kr: usize, n: usize, tt: usize, tr: usize) -> (SystemConfig, CachePlacement) {
        let cfg = SystemConfig::from_t(kt, kr, n, tt, tr, 3).unwrap();
        let dims = derived_dimensions(&cfg, 2).unwrap();
        let p = place_caches(&cfg, &dims, &SeedTree::new(cfg.seed)).unwrap();
        (cfg, p)
    }

    #[test]
    fn placement_examples() {
        let (cfg, p) = placed(2, 2, 2, 1, 1);
        for l in 0..2 {
            for file in 1..=2 {
                let held = p.tx_cache[l].iter().filter(|&&u| p.catalog().id(u).n == file).count();
                assert_eq!(held, 2);
            }
        }
        for k in 0..2 {
            assert_eq!(p.rx_cache[k].len(), 2 * 2);
        }
        assert!(verify_placement(&p, &cfg).is_empty());

        let (_, p) = placed(2, 3, 2, 2, 0);
        assert!(p.tx_cache.iter().all(|c| c.len() == p.catalog().len()));
        assert!(p.rx_cache.iter().all(BTreeSet::is_empty));
    }

    #[test]
    fn placement_budgets_and_completeness() {
        for (kt, kr, n, tt, tr) in [(2, 2, 2, 1, 1), (2, 3, 3, 2, 1), (3, 4, 4, 2, 2), (3, 5, 2, 2, 1), (4, 6, 2, 3, 2)] {
            let (cfg, p) = placed(kt, kr, n, tt, tr);
            let total = p.catalog().len() as i64;
            for c in &p.tx_cache {
                assert_eq!(Rational::new((c.len() as i64).into(), total.into()), frac(tt as i64, kt as i64));
            }
            for c in &p.rx_cache {
                assert_eq!(Rational::new((c.len() as i64).into(), total.into()), frac(tr as i64, kr as i64));
            }
            for u in 0..p.catalog().len() {
                let (tx, rx) = p.holders(u);
                assert_eq!(tx, p.catalog().id(u).t.members());
                assert_eq!(rx, p.catalog().id(u).r.members());
            }
            assert!(verify_placement(&p, &cfg).is_empty());
        }
    }

    #[test]
    fn placement_is_deterministic() {
        let (_, a) = placed(3, 4, 4, 2, 2);
        let (_, b) = placed(3, 4, 4, 2, 2);
        assert_eq!(a.tx_cache, b.tx_cache);
        assert_eq!(a.rx_cache, b.rx_cache);
        assert_eq!(a.payload, b.payload);
    }

    #[test]
    fn violations_name_the_node() {
        let (cfg, p) = placed(2, 2, 2, 1, 1);
        let mut bad = p.clone();
        let foreign = (0..bad.catalog().len()).find(|u| !bad.rx_cache[0].contains(u)).unwrap();
        bad.rx_cache[0].insert(foreign);
        let v = verify_placement(&bad, &cfg);
        assert_eq!(v.len(), 1);
        assert!(matches!(&v[0], Violation::Budget { node: Node::Rx(1), .. }));

        let mut bad = p;
        let first = *bad.tx_cache[1].iter().next().unwrap();
        bad.tx_cache[1].remove(&first);
        let v = verify_placement(&bad, &cfg);
        assert_eq!(v, vec![Violation::Membership { node: Node::Tx(2), missing: vec![first] }]);
    }

    /// Every (receiver, needed unit) pair maps to exactly one block (T, S)
    /// via S = R + {k} + f(R').
    #[test]
    fn block_coverage_is_exact() {
        let cfg = SystemConfig::from_t(3, 5, 3, 2, 1, 0).unwrap();
        let cat = UnitCatalog::new(&cfg).unwrap();
        let demand = Demand::new(vec![1, 2, 2, 3, 1], &cfg).unwrap();
        for k in 1..=cfg.k_r {
            let mut seen = BTreeMap::new();
            for t in enumerate_subsets(cfg.k_t, cfg.t_t).unwrap() {
                for sset in enumerate_subsets(cfg.k_r, cfg.t_t + cfg.t_r).unwrap() {
                    if !sset.contains(k) {
                        continue;
                    }
                    for g in sub_subsets(&sset, cfg.t_r + 1).unwrap() {
                        if g.contains(k) {
                            let u = block_unit(&cat, cfg.k_r, demand.file(k - 1), &t, &sset, &g, k);
                            assert!(seen.insert(u, (t.clone(), sset.clone())).is_none());
                        }
                    }
                }
            }
            let needed: BTreeSet<usize> = cat.needed_by(k, &demand).into_iter().collect();
            assert_eq!(seen.keys().copied().collect::<BTreeSet<_>>(), needed);
        }
    }
}
