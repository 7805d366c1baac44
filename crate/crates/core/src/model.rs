//! System parameters shared by every other module.

use num_traits::{One, Zero};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::field::{PrimeField, MERSENNE_61};
use crate::ratio::{exact, int, parse_rational, to_u64, Rational};

/// Smallest field prime accepted for simulation (2^31 - 1).
pub const MIN_FIELD_PRIME: u64 = (1 << 31) - 1;

pub fn binomial(n: i64, k: i64) -> u64 {
    if k < 0 || n < 0 || k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    u64::try_from(acc).expect("binomial overflows u64")
}

/// Unvalidated parameters as they arrive from a config file or flags.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    pub k_t: Option<i64>,
    pub k_r: Option<i64>,
    pub n_files: Option<i64>,
    pub m_t: Option<Rational>,
    pub m_r: Option<Rational>,
    pub t_t: Option<Rational>,
    pub t_r: Option<Rational>,
    pub alpha: Option<Rational>,
    pub t_c: Option<Rational>,
    pub t_f: Option<Rational>,
    pub field_prime: Option<u64>,
    pub seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonConfig {
    k_t: i64,
    k_r: i64,
    n_files: i64,
    #[serde(default, deserialize_with = "de_rational")]
    m_t: Option<Rational>,
    #[serde(default, deserialize_with = "de_rational")]
    m_r: Option<Rational>,
    #[serde(default, deserialize_with = "de_rational")]
    alpha: Option<Rational>,
    #[serde(default, deserialize_with = "de_rational")]
    t_c: Option<Rational>,
    #[serde(default, deserialize_with = "de_rational")]
    t_f: Option<Rational>,
    #[serde(default)]
    field_prime: Option<u64>,
    #[serde(default)]
    seed: Option<u64>,
}

/// Accepts a JSON number (read through its decimal text, so `0.1` is
/// exactly 1/10) or a string such as `"1/5"`.
fn de_rational<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Rational>, D::Error> {
    let v = Option::<serde_json::Value>::deserialize(d)?;
    match v {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(serde_json::Value::Number(n)) => parse_rational(&n.to_string()).map(Some).map_err(serde::de::Error::custom),
        Some(serde_json::Value::String(s)) => parse_rational(&s).map(Some).map_err(serde::de::Error::custom),
        Some(other) => Err(serde::de::Error::custom(format!("expected a number or rational string, got {other}"))),
    }
}

impl RawConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let j: JsonConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            k_t: Some(j.k_t),
            k_r: Some(j.k_r),
            n_files: Some(j.n_files),
            m_t: j.m_t,
            m_r: j.m_r,
            t_t: None,
            t_r: None,
            alpha: j.alpha,
            t_c: j.t_c,
            t_f: j.t_f,
            field_prime: j.field_prime,
            seed: j.seed,
        })
    }

    /// Values set in `other` replace ours.
    pub fn overlay(mut self, other: &RawConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f.clone(); } )* };
        }
        take!(k_t, k_r, n_files, m_t, m_r, t_t, t_r, alpha, t_c, t_f, field_prime, seed);
        if other.t_t.is_some() || other.t_r.is_some() {
            self.m_t = other.m_t.clone();
            self.m_r = other.m_r.clone();
        }
        if other.alpha.is_some() {
            self.t_c = None;
            self.t_f = None;
        } else if other.t_c.is_some() || other.t_f.is_some() {
            self.alpha = None;
        }
        self
    }
}

/// Validated parameters with the derived normalized cache sizes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SystemConfig {
    pub k_t: usize,
    pub k_r: usize,
    pub n_files: usize,
    #[serde(serialize_with = "ser_exact")]
    pub m_t: Rational,
    #[serde(serialize_with = "ser_exact")]
    pub m_r: Rational,
    #[serde(serialize_with = "ser_exact")]
    pub alpha: Rational,
    pub field_prime: u64,
    pub seed: u64,
    pub t_t: usize,
    pub t_r: usize,
}

pub(crate) fn ser_exact<S: serde::Serializer>(r: &Rational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&exact(r))
}

fn positive(name: &str, v: Option<i64>) -> Result<usize> {
    match v {
        Some(x) if x >= 1 => Ok(x as usize),
        Some(x) => Err(Error::OutOfRange(format!("{name} = {x} (must be >= 1)"))),
        None => Err(Error::Config(format!("missing {name}"))),
    }
}

pub fn normalize_config(raw: &RawConfig) -> Result<SystemConfig> {
    let k_t = positive("k_t", raw.k_t)?;
    let k_r = positive("k_r", raw.k_r)?;
    let n = positive("n_files", raw.n_files)?;
    let n_r = int(n as i64);

    let (t_t, t_r) = match (&raw.m_t, &raw.m_r, &raw.t_t, &raw.t_r) {
        (Some(m_t), Some(m_r), _, _) => {
            for (name, m) in [("m_t", m_t), ("m_r", m_r)] {
                if *m < Rational::zero() || *m > n_r {
                    return Err(Error::OutOfRange(format!("{name} = {} (must lie in [0, n_files])", exact(m))));
                }
            }
            (int(k_t as i64) * m_t / &n_r, int(k_r as i64) * m_r / &n_r)
        }
        (None, None, Some(t_t), Some(t_r)) => (t_t.clone(), t_r.clone()),
        _ => return Err(Error::Config("need either (m_t, m_r) or (t_t, t_r)".into())),
    };

    if t_t < Rational::one() {
        return Err(Error::TransmitCacheTooSmall(exact(&t_t)));
    }
    let tt = to_u64(&t_t).ok_or(Error::NonIntegerT { name: "t_t", value: exact(&t_t) })? as usize;
    if t_r < Rational::zero() {
        return Err(Error::OutOfRange(format!("t_r = {}", exact(&t_r))));
    }
    let tr = to_u64(&t_r).ok_or(Error::NonIntegerT { name: "t_r", value: exact(&t_r) })? as usize;
    if tt > k_t {
        return Err(Error::OutOfRange(format!("t_t = {tt} exceeds k_t = {k_t}")));
    }
    if tr > k_r {
        return Err(Error::OutOfRange(format!("t_r = {tr} exceeds k_r = {k_r}")));
    }

    let alpha = match (&raw.alpha, &raw.t_c, &raw.t_f) {
        (Some(a), _, _) => a.clone(),
        (None, Some(tc), Some(tf)) => crate::mixed::alpha_from_block(tf, tc)?,
        (None, None, None) => Rational::zero(),
        _ => return Err(Error::Config("t_c and t_f must be given together".into())),
    };
    if alpha < Rational::zero() || alpha > Rational::one() {
        return Err(Error::OutOfRange(format!("alpha = {} (must lie in [0, 1])", exact(&alpha))));
    }

    let field_prime = raw.field_prime.unwrap_or(MERSENNE_61);
    if field_prime < MIN_FIELD_PRIME {
        return Err(Error::OutOfRange(format!("field_prime = {field_prime} (must be >= 2^31 - 1)")));
    }
    PrimeField::new(field_prime)?;

    Ok(SystemConfig {
        k_t,
        k_r,
        n_files: n,
        m_t: int(tt as i64) * &n_r / int(k_t as i64),
        m_r: int(tr as i64) * &n_r / int(k_r as i64),
        alpha,
        field_prime,
        seed: raw.seed.unwrap_or(0),
        t_t: tt,
        t_r: tr,
    })
}

impl SystemConfig {
    pub fn to_raw(&self) -> RawConfig {
        RawConfig {
            k_t: Some(self.k_t as i64),
            k_r: Some(self.k_r as i64),
            n_files: Some(self.n_files as i64),
            m_t: Some(self.m_t.clone()),
            m_r: Some(self.m_r.clone()),
            alpha: Some(self.alpha.clone()),
            field_prime: Some(self.field_prime),
            seed: Some(self.seed),
            ..RawConfig::default()
        }
    }

    /// Shorthand used throughout the tests: integer cache sizes given
    /// directly as (t_t, t_r).
    pub fn from_t(k_t: usize, k_r: usize, n_files: usize, t_t: usize, t_r: usize, seed: u64) -> Result<Self> {
        normalize_config(&RawConfig {
            k_t: Some(k_t as i64),
            k_r: Some(k_r as i64),
            n_files: Some(n_files as i64),
            t_t: Some(int(t_t as i64)),
            t_r: Some(int(t_r as i64)),
            seed: Some(seed),
            ..RawConfig::default()
        })
    }

    pub fn with_alpha(mut self, alpha: Rational) -> Result<Self> {
        if alpha < Rational::zero() || alpha > Rational::one() {
            return Err(Error::OutOfRange(format!("alpha = {}", exact(&alpha))));
        }
        self.alpha = alpha;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn field(&self) -> PrimeField {
        PrimeField::new(self.field_prime).expect("validated at construction")
    }

    /// Delivery simulations need |S| = t_t + t_r receivers per block.
    pub fn check_simulatable(&self) -> Result<()> {
        if self.t_t + self.t_r > self.k_r {
            return Err(Error::Domain(format!(
                "t_t + t_r = {} exceeds k_r = {}; only the closed form covers this regime",
                self.t_t + self.t_r,
                self.k_r
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Dimensions {
    pub subfiles_per_file: usize,
    pub minifiles_per_subfile: usize,
    pub symbols_per_minifile: usize,
    pub total_units: usize,
}

impl Dimensions {
    pub fn units_per_file(&self) -> usize {
        self.subfiles_per_file * self.minifiles_per_subfile
    }

    pub fn symbols_per_file(&self) -> usize {
        self.units_per_file() * self.symbols_per_minifile
    }
}

pub fn derived_dimensions(cfg: &SystemConfig, symbols_per_minifile: usize) -> Result<Dimensions> {
    if symbols_per_minifile == 0 {
        return Err(Error::Domain("symbols_per_minifile must be >= 1".into()));
    }
    cfg.check_simulatable()?;
    let (kt, kr, tt, tr) = (cfg.k_t as i64, cfg.k_r as i64, cfg.t_t as i64, cfg.t_r as i64);
    let subfiles = (binomial(kt, tt) * binomial(kr, tr)) as usize;
    let minifiles = binomial(kr - tr - 1, tt - 1) as usize;
    Ok(Dimensions {
        subfiles_per_file: subfiles,
        minifiles_per_subfile: minifiles,
        symbols_per_minifile,
        total_units: cfg.n_files * subfiles * minifiles,
    })
}

/// Requested file per receiver, 1-based; repetitions allowed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Demand(Vec<usize>);

impl Demand {
    pub fn new(d: Vec<usize>, cfg: &SystemConfig) -> Result<Self> {
        if d.len() != cfg.k_r {
            return Err(Error::Config(format!("demand has {} entries, expected k_r = {}", d.len(), cfg.k_r)));
        }
        if let Some(bad) = d.iter().find(|&&x| x == 0 || x > cfg.n_files) {
            return Err(Error::OutOfRange(format!("demanded file {bad} (files are 1..={})", cfg.n_files)));
        }
        Ok(Self(d))
    }

    /// Receiver k asks for file ((k-1) mod N) + 1.
    pub fn round_robin(cfg: &SystemConfig) -> Self {
        Self((0..cfg.k_r).map(|k| k % cfg.n_files + 1).collect())
    }

    /// All N^{K_r} demand vectors in lexicographic order.
    pub fn all(cfg: &SystemConfig) -> Vec<Demand> {
        let mut out = Vec::new();
        let mut cur = vec![1usize; cfg.k_r];
        loop {
            out.push(Demand(cur.clone()));
            let mut i = cfg.k_r;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if cur[i] < cfg.n_files {
                    cur[i] += 1;
                    break;
                }
                cur[i] = 1;
            }
        }
    }

    /// File demanded by receiver `k` (0-based receiver index).
    pub fn file(&self, k: usize) -> usize {
        self.0[k]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn parse(text: &str, cfg: &SystemConfig) -> Result<Self> {
        let d = text
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad demand entry {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(d, cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockTiming {
    pub t_c: Rational,
    pub t_f: Rational,
}

impl BlockTiming {
    pub fn new(t_c: Rational, t_f: Rational) -> Result<Self> {
        crate::mixed::alpha_from_block(&t_f, &t_c)?;
        Ok(Self { t_c, t_f })
    }

    pub fn alpha(&self) -> Rational {
        &self.t_f / &self.t_c
    }
}
