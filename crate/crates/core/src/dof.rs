//! Closed-form achievable DoF, exact over the rationals, plus
//! interpolation between integer cache points and parameter sweeps.
//!
//! Every value here is an achievable DoF, not a claimed optimum.

use std::cell::RefCell;
use std::collections::HashMap;
use std::io::Write;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ser_exact;
use crate::ratio::{decimal, exact, int, Rational};

/// Sum of 1/i for i in `from..=to` (zero when the range is empty).
pub fn harmonic(from: u64, to: u64) -> Rational {
    thread_local! {
        static MEMO: RefCell<HashMap<(u64, u64), Rational>> = RefCell::new(HashMap::new());
    }
    let from = from.max(1);
    if let Some(h) = MEMO.with(|m| m.borrow().get(&(from, to)).cloned()) {
        return h;
    }
    // one reduction over the common denominator instead of one per term
    let l = (from..=to).fold(BigInt::one(), |acc, i| acc.lcm(&BigInt::from(i)));
    let num = (from..=to).fold(BigInt::zero(), |acc, i| acc + &l / BigInt::from(i));
    let h = Rational::new(num, l);
    MEMO.with(|m| m.borrow_mut().insert((from, to), h.clone()));
    h
}

pub fn dof_full(t_t: u64, t_r: u64, k_r: u64) -> Result<Rational> {
    if t_t < 1 {
        return Err(Error::Domain("t_t >= 1 required".into()));
    }
    Ok(int((t_t + t_r).min(k_r) as i64))
}

/// t_t / (1/(t_r+1) + ... + 1/(t_r+t_t)).
pub fn dof_delayed(t_t: u64, t_r: u64) -> Result<Rational> {
    if t_t < 1 {
        return Err(Error::Domain("t_t >= 1 required".into()));
    }
    Ok(int(t_t as i64) / harmonic(t_r + 1, t_r + t_t))
}

pub fn dof_mixed(t_t: u64, t_r: u64, k_r: u64, alpha: &Rational) -> Result<Rational> {
    if t_t < 1 {
        return Err(Error::Domain("t_t >= 1 required".into()));
    }
    if t_t + t_r > k_r {
        return Err(Error::Domain(format!("t_t + t_r = {} exceeds k_r = {k_r}", t_t + t_r)));
    }
    check_alpha(alpha)?;
    let s = int((t_t + t_r) as i64);
    Ok(&s + alpha * (dof_delayed(t_t, t_r)? - &s))
}

/// Order-j MISO broadcast DoF with delayed CSIT: (K-j+1) / (1/j + ... + 1/K).
pub fn dof_mat_order(l: u64, k: u64, j: u64) -> Result<Rational> {
    if j < 1 || j > k {
        return Err(Error::Domain(format!("order j = {j} must lie in 1..={k}")));
    }
    if l < k - j + 1 {
        return Err(Error::Domain(format!("need L >= K - j + 1 = {}, got L = {l}", k - j + 1)));
    }
    Ok(int((k - j + 1) as i64) / harmonic(j, k))
}

/// Every transmitter holds the whole library.
pub fn dof_multiserver(k_t: u64, t_r: u64, k_r: u64) -> Result<Rational> {
    if k_t < 1 || t_r > k_r {
        return Err(Error::Domain(format!("need k_t >= 1 and t_r <= k_r (k_t = {k_t}, t_r = {t_r})")));
    }
    Ok(int((k_t + t_r).min(k_r) as i64))
}

fn check_alpha(alpha: &Rational) -> Result<()> {
    if *alpha < Rational::zero() || *alpha > Rational::one() {
        return Err(Error::Domain(format!("alpha = {} outside [0, 1]", exact(alpha))));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Curve {
    Full,
    Delayed,
    Mixed,
}

fn curve_at(curve: Curve, t_t: u64, t_r: u64, k_r: u64, alpha: &Rational) -> Result<Rational> {
    match curve {
        Curve::Full => dof_full(t_t, t_r, k_r),
        Curve::Delayed => {
            if t_t + t_r > k_r {
                return Err(Error::Domain(format!("t_t + t_r = {} exceeds k_r = {k_r}", t_t + t_r)));
            }
            dof_delayed(t_t, t_r)
        }
        Curve::Mixed => dof_mixed(t_t, t_r, k_r, alpha),
    }
}

fn floor_u64(r: &Rational) -> Option<u64> {
    use num_traits::ToPrimitive;
    r.floor().to_integer().to_u64()
}

/// Piecewise-linear interpolation of a closed form between integer
/// (t_t, t_r) knots.
///
/// Each unit cell is split along its anti-diagonal into two triangles and
/// the value is the barycentric blend of the triangle's corners. On cell
/// edges this is plain linear interpolation along the moving coordinate,
/// and on lines of constant t_t + t_r it blends the two neighbouring
/// integer points of that line, so every point with t_t + t_r <= K_r only
/// touches corners that satisfy the same constraint.
pub fn dof_interpolated(curve: Curve, t_t: &Rational, t_r: &Rational, k_r: u64, alpha: &Rational) -> Result<Rational> {
    if *t_t < Rational::one() || *t_r < Rational::zero() {
        return Err(Error::Domain(format!("point ({}, {}) outside t_t >= 1, t_r >= 0", exact(t_t), exact(t_r))));
    }
    check_alpha(alpha)?;
    let a = floor_u64(t_t).ok_or_else(|| Error::Domain("t_t too large".into()))?;
    let b = floor_u64(t_r).ok_or_else(|| Error::Domain("t_r too large".into()))?;
    let fx = t_t - int(a as i64);
    let fy = t_r - int(b as i64);
    let at = |x: u64, y: u64| curve_at(curve, x, y, k_r, alpha);
    if fx.is_zero() && fy.is_zero() {
        return at(a, b);
    }
    let one = Rational::one();
    if &fx + &fy <= one {
        let mut v = (&one - &fx - &fy) * at(a, b)?;
        if !fx.is_zero() {
            v += &fx * at(a + 1, b)?;
        }
        if !fy.is_zero() {
            v += &fy * at(a, b + 1)?;
        }
        Ok(v)
    } else {
        let w11 = &fx + &fy - &one;
        Ok((&one - &fy) * at(a + 1, b)? + (&one - &fx) * at(a, b + 1)? + w11 * at(a + 1, b + 1)?)
    }
}

/// One sweep row. `slope` is the derivative of d_mixed with respect to
/// alpha at this cache point.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DofPoint {
    #[serde(serialize_with = "ser_exact")]
    pub alpha: Rational,
    #[serde(serialize_with = "ser_exact")]
    pub beta: Rational,
    #[serde(serialize_with = "ser_exact")]
    pub t_t: Rational,
    #[serde(serialize_with = "ser_exact")]
    pub t_r: Rational,
    pub k_r: u64,
    #[serde(serialize_with = "ser_exact")]
    pub d_full: Rational,
    #[serde(serialize_with = "ser_exact")]
    pub d_delayed: Rational,
    #[serde(serialize_with = "ser_exact")]
    pub d_mixed: Rational,
    #[serde(serialize_with = "ser_exact")]
    pub slope: Rational,
}

impl DofPoint {
    pub fn evaluate(t_t: &Rational, t_r: &Rational, k_r: u64, alpha: &Rational) -> Result<Self> {
        let d_full = dof_interpolated(Curve::Full, t_t, t_r, k_r, alpha)?;
        let d_delayed = dof_interpolated(Curve::Delayed, t_t, t_r, k_r, alpha)?;
        let d_mixed = dof_interpolated(Curve::Mixed, t_t, t_r, k_r, alpha)?;
        Ok(Self {
            alpha: alpha.clone(),
            beta: t_r / t_t,
            t_t: t_t.clone(),
            t_r: t_r.clone(),
            k_r,
            slope: &d_delayed - &d_full,
            d_full,
            d_delayed,
            d_mixed,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SweepSpec {
    /// d vs alpha at fixed beta, one series per aggregate cache sum.
    /// `k_r = None` uses K_r equal to each sum.
    Alpha { beta: Rational, sums: Vec<u64>, k_r: Option<u64>, grid: Vec<Rational> },
    /// d vs beta at fixed t_t + t_r, one series per alpha.
    Beta { sum: u64, k_r: Option<u64>, alphas: Vec<Rational>, grid: Vec<Rational> },
}

impl SweepSpec {
    /// Alpha sweep with beta = 1, sums {20, 60, 100}, alpha = 0, 1/20, ..., 1.
    pub fn fig3() -> Self {
        SweepSpec::Alpha {
            beta: int(1),
            sums: vec![20, 60, 100],
            k_r: None,
            grid: (0..=20).map(|i| Rational::new(i.into(), 20.into())).collect(),
        }
    }

    /// Beta sweep with t_t + t_r = 100, alpha in {0, 1/4, 1/2, 3/4, 1},
    /// beta running over every integer split t_r = 1..=99.
    pub fn fig4() -> Self {
        SweepSpec::Beta {
            sum: 100,
            k_r: None,
            alphas: (0..=4).map(|i| Rational::new(i.into(), 4.into())).collect(),
            grid: (1..=99).map(|t_r| Rational::new(t_r.into(), (100 - t_r).into())).collect(),
        }
    }
}

/// Cache split (t_t, t_r) with t_t + t_r = sum and t_r / t_t = beta.
pub fn split_sum(sum: u64, beta: &Rational) -> (Rational, Rational) {
    let s = int(sum as i64);
    let t_t = &s / (Rational::one() + beta);
    let t_r = &s - &t_t;
    (t_t, t_r)
}

pub fn sweep(spec: &SweepSpec) -> Result<Vec<DofPoint>> {
    match spec {
        SweepSpec::Alpha { beta, sums, k_r, grid } => {
            if grid.is_empty() || sums.is_empty() {
                return Err(Error::EmptyGrid);
            }
            if *beta < Rational::zero() {
                return Err(Error::Domain("beta must be >= 0".into()));
            }
            let mut rows = Vec::with_capacity(sums.len() * grid.len());
            for &s in sums {
                let (t_t, t_r) = split_sum(s, beta);
                for a in grid {
                    rows.push(DofPoint::evaluate(&t_t, &t_r, k_r.unwrap_or(s), a)?);
                }
            }
            Ok(rows)
        }
        SweepSpec::Beta { sum, k_r, alphas, grid } => {
            if grid.is_empty() || alphas.is_empty() {
                return Err(Error::EmptyGrid);
            }
            let mut rows = Vec::with_capacity(alphas.len() * grid.len());
            for a in alphas {
                for beta in grid {
                    if *beta <= Rational::zero() {
                        return Err(Error::Domain(format!("beta = {} must be > 0", exact(beta))));
                    }
                    let (t_t, t_r) = split_sum(*sum, beta);
                    rows.push(DofPoint::evaluate(&t_t, &t_r, k_r.unwrap_or(*sum), a)?);
                }
            }
            Ok(rows)
        }
    }
}

pub const CSV_HEADER: &str = "alpha,beta,t_t,t_r,k_r,d_full,d_delayed,d_mixed,d_mixed_exact";

pub fn csv_row(p: &DofPoint, sig: usize) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        decimal(&p.alpha, sig),
        decimal(&p.beta, sig),
        decimal(&p.t_t, sig),
        decimal(&p.t_r, sig),
        p.k_r,
        decimal(&p.d_full, sig),
        decimal(&p.d_delayed, sig),
        decimal(&p.d_mixed, sig),
        exact(&p.d_mixed)
    )
}

pub fn write_csv<W: Write>(rows: &[DofPoint], sig: usize, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", csv_row(r, sig))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratio::frac;

    #[test]
    fn full_examples() {
        assert_eq!(dof_full(1, 0, 5).unwrap(), int(1));
        assert_eq!(dof_full(2, 1, 3).unwrap(), int(3));
        assert_eq!(dof_full(50, 50, 64).unwrap(), int(64));
        assert!(dof_full(0, 1, 3).is_err());
    }

    #[test]
    fn delayed_examples() {
        for t_r in 0..10 {
            assert_eq!(dof_delayed(1, t_r).unwrap(), int(t_r as i64 + 1));
        }
        assert_eq!(dof_delayed(2, 0).unwrap(), frac(4, 3));
        assert_eq!(dof_delayed(2, 1).unwrap(), frac(12, 5));
        assert!(dof_delayed(0, 0).is_err());
    }

    #[test]
    fn mixed_examples() {
        assert_eq!(dof_mixed(2, 1, 4, &int(0)).unwrap(), int(3));
        assert_eq!(dof_mixed(2, 1, 4, &int(1)).unwrap(), frac(12, 5));
        assert_eq!(dof_mixed(2, 1, 4, &frac(1, 2)).unwrap(), frac(27, 10));
        assert!(dof_mixed(3, 2, 4, &int(0)).is_err());
        assert!(dof_mixed(1, 0, 4, &int(2)).is_err());
    }

    #[test]
    fn mat_order_and_multiserver() {
        assert_eq!(dof_mat_order(1, 5, 5).unwrap(), int(5));
        assert_eq!(dof_mat_order(2, 2, 1).unwrap(), frac(4, 3));
        assert_eq!(dof_mat_order(2, 3, 2).unwrap(), frac(12, 5));
        assert!(dof_mat_order(1, 3, 1).is_err());
        assert_eq!(dof_multiserver(1, 0, 1).unwrap(), int(1));
        assert_eq!(dof_multiserver(2, 1, 3).unwrap(), int(3));
        assert_eq!(dof_multiserver(3, 2, 10).unwrap(), int(5));
    }

    #[test]
    fn interpolation_examples() {
        let z = int(0);
        for (tt, tr) in [(1, 0), (2, 1), (3, 3)] {
            assert_eq!(
                dof_interpolated(Curve::Delayed, &int(tt), &int(tr), 6, &z).unwrap(),
                dof_delayed(tt as u64, tr as u64).unwrap()
            );
        }
        assert_eq!(dof_interpolated(Curve::Full, &frac(3, 2), &z, 3, &z).unwrap(), frac(3, 2));
        // halfway between 4/3 and 12/5
        assert_eq!(dof_interpolated(Curve::Delayed, &int(2), &frac(1, 2), 3, &z).unwrap(), frac(28, 15));
        assert!(dof_interpolated(Curve::Full, &frac(1, 2), &z, 3, &z).is_err());
        // outside the mixed hull
        assert!(dof_interpolated(Curve::Mixed, &frac(5, 2), &int(1), 3, &z).is_err());
    }

    /// On the anti-diagonal the blend only uses the two integer
    /// neighbours of the same sum.
    #[test]
    fn interpolation_on_constant_sum_line() {
        let a = frac(1, 2);
        let v = dof_interpolated(Curve::Mixed, &frac(5, 2), &frac(3, 2), 4, &a).unwrap();
        let lo = dof_mixed(2, 2, 4, &a).unwrap();
        let hi = dof_mixed(3, 1, 4, &a).unwrap();
        assert_eq!(v, (lo + hi) / int(2));
    }

    #[test]
    fn sweep_examples() {
        let rows = sweep(&SweepSpec::Alpha { beta: int(1), sums: vec![100], k_r: None, grid: vec![int(0), int(1)] }).unwrap();
        assert_eq!(rows[0].d_mixed, int(100));
        let end = int(50) / harmonic(51, 100);
        assert_eq!(rows[1].d_mixed, end);
        assert!((crate::ratio::to_f64(&end) - 72.66).abs() < 0.01);

        let rows = sweep(&SweepSpec::fig4()).unwrap();
        assert_eq!(rows.len(), 5 * 99);
        assert!(rows[..99].iter().all(|r| r.d_mixed == int(100)));

        let rows = sweep(&SweepSpec::Beta {
            sum: 100,
            k_r: None,
            alphas: vec![int(1)],
            grid: vec![frac(1, 3), frac(1, 2), int(1), frac(3, 2), int(2), int(3)],
        })
        .unwrap();
        assert!(rows.windows(2).all(|w| w[0].d_mixed < w[1].d_mixed));

        assert_eq!(sweep(&SweepSpec::Alpha { beta: int(1), sums: vec![4], k_r: None, grid: vec![] }), Err(Error::EmptyGrid));
        assert_eq!(sweep(&SweepSpec::fig3()).unwrap().len(), 63);
    }

    #[test]
    fn mixed_is_affine_in_alpha() {
        for tt in 1..=6u64 {
            for tr in 0..=6u64 {
                let kr = tt + tr;
                let d0 = dof_mixed(tt, tr, kr, &int(0)).unwrap();
                let d1 = dof_mixed(tt, tr, kr, &int(1)).unwrap();
                assert!(d1 <= d0);
                for q in 0..=8 {
                    let a = frac(q, 8);
                    let expect = (int(1) - &a) * &d0 + &a * &d1;
                    assert_eq!(dof_mixed(tt, tr, kr, &a).unwrap(), expect);
                }
            }
        }
    }

    #[test]
    fn harmonic_mean_bound() {
        for tt in 1..=10u64 {
            for tr in 0..=10u64 {
                let d = dof_delayed(tt, tr).unwrap();
                let s = int((tt + tr) as i64);
                if tt == 1 {
                    assert_eq!(d, s);
                } else {
                    assert!(d < s, "({tt},{tr})");
                }
            }
        }
    }

    #[test]
    fn nondecreasing_in_receive_share() {
        for s in 2..=12u64 {
            for q in 1..=4 {
                let a = frac(q, 4);
                let vals: Vec<_> = (0..s).map(|tr| dof_mixed(s - tr, tr, s, &a).unwrap()).collect();
                assert!(vals.windows(2).all(|w| w[0] <= w[1]), "s = {s}");
            }
        }
    }

    #[test]
    fn closed_forms_agree() {
        for kt in 1..=8u64 {
            for kr in 1..=10u64 {
                for tr in 0..=kr {
                    assert_eq!(dof_full(kt, tr, kr).unwrap(), dof_multiserver(kt, tr, kr).unwrap());
                }
            }
        }
        for tt in 1..=10u64 {
            for tr in 0..=10u64 {
                assert_eq!(dof_delayed(tt, tr).unwrap(), dof_mat_order(tt, tt + tr, tr + 1).unwrap());
            }
        }
    }

    #[test]
    fn csv_format() {
        let p = DofPoint::evaluate(&int(2), &int(1), 3, &frac(1, 2)).unwrap();
        assert_eq!(csv_row(&p, 6), "0.5,0.5,2,1,3,3,2.4,2.7,27/10");
        let mut buf = Vec::new();
        write_csv(&[p], 6, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with(CSV_HEADER));
    }
}
