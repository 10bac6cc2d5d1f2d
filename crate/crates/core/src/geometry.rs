//! Flat torus and open-space geometry.
//!
//! Points are plain `&[f64]` slices of length `n`. On the torus every
//! coordinate lives in `[0, period)` and differences are taken as the
//! minimal image, with the antipodal tie resolved to `-period/2`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_state, Result};

pub const TWO_PI: f64 = std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    Torus {
        n: usize,
        #[serde(default = "default_period")]
        period: f64,
    },
    Open {
        n: usize,
    },
}

fn default_period() -> f64 {
    TWO_PI
}

impl Domain {
    pub fn torus(n: usize) -> Self {
        Domain::Torus { n, period: TWO_PI }
    }

    pub fn open(n: usize) -> Self {
        Domain::Open { n }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Domain::Torus { n, .. } | Domain::Open { n } => n,
        }
    }

    pub fn period(&self) -> Option<f64> {
        match *self {
            Domain::Torus { period, .. } => Some(period),
            Domain::Open { .. } => None,
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self, Domain::Torus { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(invalid_state("domain dimension must be at least 1"));
        }
        if let Some(p) = self.period() {
            if !(p.is_finite() && p > 0.0) {
                return Err(invalid_state(format!("torus period must be positive, got {p}")));
            }
        }
        Ok(())
    }

    /// Largest possible geodesic distance, `None` on open space.
    pub fn max_distance(&self) -> Option<f64> {
        self.period().map(|p| (self.dim() as f64).sqrt() * p / 2.0)
    }
}

#[inline]
pub(crate) fn wrap_coord(x: f64, period: f64) -> f64 {
    let r = x.rem_euclid(period);
    // rem_euclid rounds tiny negatives up to `period`
    if r >= period {
        0.0
    } else {
        r
    }
}

/// Minimal-image representative of a coordinate difference, in `[-period/2, period/2)`.
#[inline]
pub(crate) fn min_image_coord(d: f64, period: f64) -> f64 {
    let half = 0.5 * period;
    let mut r = (d + half).rem_euclid(period) - half;
    if r >= half {
        r -= period;
    }
    r
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(invalid_state("non-finite coordinate"))
    }
}

fn check_dim(x: &[f64], d: &Domain) -> Result<()> {
    if x.len() != d.dim() {
        return Err(invalid_state(format!(
            "dimension mismatch: point has {} coordinates, domain has {}",
            x.len(),
            d.dim()
        )));
    }
    Ok(())
}

pub fn wrap_position(x: &[f64], d: &Domain) -> Result<Vec<f64>> {
    check_dim(x, d)?;
    check_finite(x)?;
    let mut out = x.to_vec();
    wrap_in_place(&mut out, d);
    Ok(out)
}

/// Wraps every coordinate of a flat buffer (any multiple of `n`) into the domain.
pub fn wrap_in_place(x: &mut [f64], d: &Domain) {
    if let Some(p) = d.period() {
        for c in x.iter_mut() {
            *c = wrap_coord(*c, p);
        }
    }
}

/// Representative of `x - y`: minimal image on the torus, plain difference on open space.
pub fn displacement(x: &[f64], y: &[f64], d: &Domain) -> Result<Vec<f64>> {
    check_dim(x, d)?;
    check_dim(y, d)?;
    let mut out = vec![0.0; x.len()];
    displacement_into(x, y, d, &mut out);
    Ok(out)
}

/// Unchecked variant used on hot paths; all slices must have length `n`.
#[inline]
pub fn displacement_into(x: &[f64], y: &[f64], d: &Domain, out: &mut [f64]) {
    match d.period() {
        Some(p) => {
            for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                *o = min_image_coord(a - b, p);
            }
        }
        None => {
            for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                *o = a - b;
            }
        }
    }
}

pub fn distance(x: &[f64], y: &[f64], d: &Domain) -> Result<f64> {
    Ok(norm(&displacement(x, y, d)?))
}

/// Squared geodesic distance without allocation.
#[inline]
pub fn distance_sq(x: &[f64], y: &[f64], d: &Domain) -> f64 {
    match d.period() {
        Some(p) => x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let c = min_image_coord(a - b, p);
                c * c
            })
            .sum(),
        None => x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum(),
    }
}

#[inline]
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_examples() {
        let t1 = Domain::torus(1);
        let w = wrap_position(&[7.0], &t1).unwrap();
        assert!((w[0] - (7.0 - TWO_PI)).abs() < 1e-15);
        assert!((w[0] - 0.716815).abs() < 1e-6);
        assert_eq!(wrap_position(&[0.0], &t1).unwrap(), vec![0.0]);
        assert_eq!(wrap_position(&[-5.0, 9.0], &Domain::open(2)).unwrap(), vec![-5.0, 9.0]);
    }

    #[test]
    fn wrap_rejects_non_finite() {
        assert!(wrap_position(&[f64::NAN], &Domain::torus(1)).is_err());
        assert!(wrap_position(&[f64::INFINITY, 0.0], &Domain::open(2)).is_err());
    }

    #[test]
    fn tiny_negative_wraps_below_period() {
        let w = wrap_position(&[-1e-300], &Domain::torus(1)).unwrap();
        assert!(w[0] >= 0.0 && w[0] < TWO_PI);
    }

    #[test]
    fn displacement_examples() {
        let t1 = Domain::torus(1);
        let d = displacement(&[0.1], &[6.2], &t1).unwrap();
        assert!((d[0] - 0.183185).abs() < 1e-6);
        let d = displacement(&[3.0, 4.0], &[0.0, 0.0], &Domain::open(2)).unwrap();
        assert_eq!(d, vec![3.0, 4.0]);
        assert_eq!(distance(&[3.0, 4.0], &[0.0, 0.0], &Domain::open(2)).unwrap(), 5.0);
        // antipodal tie goes to -period/2
        let d = displacement(&[std::f64::consts::PI], &[0.0], &t1).unwrap();
        assert_eq!(d[0], -std::f64::consts::PI);
        let unit = Domain::Torus { n: 1, period: 1.0 };
        assert_eq!(displacement(&[0.5], &[0.0], &unit).unwrap()[0], -0.5);
        assert_eq!(displacement(&[0.0], &[0.5], &unit).unwrap()[0], -0.5);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(displacement(&[0.0], &[0.0, 1.0], &Domain::open(2)).is_err());
        assert!(wrap_position(&[0.0], &Domain::torus(2)).is_err());
    }

    proptest! {
        #[test]
        fn distance_symmetric_and_bounded(a in prop::collection::vec(-20.0f64..20.0, 3),
                                          b in prop::collection::vec(-20.0f64..20.0, 3)) {
            let d = Domain::torus(3);
            let dab = distance(&a, &b, &d).unwrap();
            let dba = distance(&b, &a, &d).unwrap();
            prop_assert!((dab - dba).abs() <= 1e-12);
            prop_assert!(dab <= d.max_distance().unwrap() + 1e-12);
            let dab = displacement(&a, &b, &d).unwrap();
            let dba = displacement(&b, &a, &d).unwrap();
            for (p, q) in dab.iter().zip(&dba) {
                if (p.abs() - std::f64::consts::PI).abs() > 1e-9 {
                    prop_assert!((p + q).abs() <= 1e-12);
                }
                prop_assert!(*p >= -std::f64::consts::PI && *p < std::f64::consts::PI);
            }
        }

        #[test]
        fn wrap_idempotent(a in prop::collection::vec(-1e3f64..1e3, 2)) {
            let d = Domain::torus(2);
            let w = wrap_position(&a, &d).unwrap();
            prop_assert_eq!(wrap_position(&w, &d).unwrap(), w.clone());
            prop_assert!(w.iter().all(|c| *c >= 0.0 && *c < TWO_PI));
        }
    }
}
