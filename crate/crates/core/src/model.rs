//! Communication kernels and radial potentials.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_state, Result};
use crate::geometry::norm;

/// A radial profile `f(r)` with its derivative `f'(r)`, `r >= 0`.
pub trait RadialProfile {
    fn value(&self, r: f64) -> f64;
    fn deriv(&self, r: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `amp * exp(1 - 1/(1 - (r/r0)^2))` inside `r < r0`, zero outside.
    SmoothBump { r0: f64, amp: f64 },
    /// Flat at `amp` up to `r_flat`, cubic Hermite ramp down to zero at `r0`.
    Plateau { amp: f64, r_flat: f64, r0: f64 },
    Constant { amp: f64 },
    /// `amp * (1 + r^2)^(-exponent/2)`; heavy-tailed when `exponent <= 1`.
    PowerTail { amp: f64, exponent: f64 },
    Zero,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            KernelSpec::SmoothBump { r0, amp } => r0 > 0.0 && amp >= 0.0 && r0.is_finite() && amp.is_finite(),
            KernelSpec::Plateau { amp, r_flat, r0 } => {
                amp >= 0.0 && amp.is_finite() && 0.0 < r_flat && r_flat < r0 && r0.is_finite()
            }
            KernelSpec::Constant { amp } => amp >= 0.0 && amp.is_finite(),
            KernelSpec::PowerTail { amp, exponent } => {
                amp >= 0.0 && amp.is_finite() && exponent >= 0.0 && exponent.is_finite()
            }
            KernelSpec::Zero => true,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid_state(format!("invalid kernel parameters: {self:?}")))
        }
    }

    /// Support radius `r0` for compactly supported kernels; `None` when the
    /// kernel never vanishes. `Zero` reports a support of `0`.
    pub fn support(&self) -> Option<f64> {
        match *self {
            KernelSpec::SmoothBump { r0, .. } | KernelSpec::Plateau { r0, .. } => Some(r0),
            KernelSpec::Zero => Some(0.0),
            KernelSpec::Constant { .. } | KernelSpec::PowerTail { .. } => None,
        }
    }

    /// Upper bound of the kernel (its value at the origin).
    pub fn sup(&self) -> f64 {
        self.value(0.0)
    }
}

impl RadialProfile for KernelSpec {
    fn value(&self, r: f64) -> f64 {
        match *self {
            KernelSpec::SmoothBump { r0, amp } => {
                let s = r / r0;
                if s >= 1.0 {
                    0.0
                } else {
                    amp * (1.0 - 1.0 / (1.0 - s * s)).exp()
                }
            }
            KernelSpec::Plateau { amp, r_flat, r0 } => {
                if r <= r_flat {
                    amp
                } else if r >= r0 {
                    0.0
                } else {
                    let u = (r - r_flat) / (r0 - r_flat);
                    amp * (1.0 - u * u * (3.0 - 2.0 * u))
                }
            }
            KernelSpec::Constant { amp } => amp,
            KernelSpec::PowerTail { amp, exponent } => amp * (1.0 + r * r).powf(-0.5 * exponent),
            KernelSpec::Zero => 0.0,
        }
    }

    fn deriv(&self, r: f64) -> f64 {
        match *self {
            KernelSpec::SmoothBump { r0, .. } => {
                let s = r / r0;
                if s >= 1.0 {
                    0.0
                } else {
                    let w = 1.0 - s * s;
                    -self.value(r) * 2.0 * s / (r0 * w * w)
                }
            }
            KernelSpec::Plateau { amp, r_flat, r0 } => {
                if r <= r_flat || r >= r0 {
                    0.0
                } else {
                    let width = r0 - r_flat;
                    let u = (r - r_flat) / width;
                    amp * 6.0 * u * (u - 1.0) / width
                }
            }
            KernelSpec::Constant { .. } | KernelSpec::Zero => 0.0,
            KernelSpec::PowerTail { amp, exponent } => {
                -amp * exponent * r * (1.0 + r * r).powf(-0.5 * exponent - 1.0)
            }
        }
    }
}

fn check_radius(r: f64) -> Result<()> {
    if r.is_nan() || r < 0.0 {
        Err(invalid_state(format!("radius must be nonnegative, got {r}")))
    } else {
        Ok(())
    }
}

pub fn kernel_eval(k: &KernelSpec, r: f64) -> Result<f64> {
    check_radius(r)?;
    Ok(k.value(r))
}

pub fn kernel_deriv(k: &KernelSpec, r: f64) -> Result<f64> {
    check_radius(r)?;
    Ok(k.deriv(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    None,
    /// `U(r) = r^2 / 2`.
    QuadraticConfinement,
    /// `U(r) = (r - l0)_+^2`.
    QuadraticWell { l0: f64 },
    /// Repulsion below `l0`, flat well on `[l0, l1]`, attraction above `l1`.
    IntervalWell { l0: f64, l1: f64 },
}

impl PotentialSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            PotentialSpec::None | PotentialSpec::QuadraticConfinement => true,
            PotentialSpec::QuadraticWell { l0 } => l0 >= 0.0 && l0.is_finite(),
            PotentialSpec::IntervalWell { l0, l1 } => 0.0 <= l0 && l0 <= l1 && l1.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid_state(format!("invalid potential parameters: {self:?}")))
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, PotentialSpec::None)
    }

    pub fn second_deriv(&self, r: f64) -> f64 {
        match *self {
            PotentialSpec::None => 0.0,
            PotentialSpec::QuadraticConfinement => 1.0,
            PotentialSpec::QuadraticWell { l0 } => {
                if r > l0 {
                    2.0
                } else {
                    0.0
                }
            }
            PotentialSpec::IntervalWell { l0, l1 } => {
                if r < l0 || r > l1 {
                    2.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl RadialProfile for PotentialSpec {
    fn value(&self, r: f64) -> f64 {
        match *self {
            PotentialSpec::None => 0.0,
            PotentialSpec::QuadraticConfinement => 0.5 * r * r,
            PotentialSpec::QuadraticWell { l0 } => {
                let d = (r - l0).max(0.0);
                d * d
            }
            PotentialSpec::IntervalWell { l0, l1 } => {
                if r < l0 {
                    (r - l0) * (r - l0)
                } else if r > l1 {
                    (r - l1) * (r - l1)
                } else {
                    0.0
                }
            }
        }
    }

    fn deriv(&self, r: f64) -> f64 {
        match *self {
            PotentialSpec::None => 0.0,
            PotentialSpec::QuadraticConfinement => r,
            PotentialSpec::QuadraticWell { l0 } => 2.0 * (r - l0).max(0.0),
            PotentialSpec::IntervalWell { l0, l1 } => {
                if r < l0 {
                    2.0 * (r - l0)
                } else if r > l1 {
                    2.0 * (r - l1)
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn potential_eval(p: &PotentialSpec, r: f64) -> Result<f64> {
    check_radius(r)?;
    Ok(p.value(r))
}

/// `grad U(x) = U'(|x|) x / |x|`, zero at the origin.
pub fn potential_grad(p: &PotentialSpec, x: &[f64]) -> Result<Vec<f64>> {
    if !x.iter().all(|c| c.is_finite()) {
        return Err(invalid_state("non-finite point"));
    }
    let mut out = vec![0.0; x.len()];
    add_potential_grad(p, x, 1.0, &mut out);
    Ok(out)
}

/// `out += scale * grad U(x)`.
#[inline]
pub(crate) fn add_potential_grad(p: &PotentialSpec, x: &[f64], scale: f64, out: &mut [f64]) {
    if p.is_none() {
        return;
    }
    let r = norm(x);
    if r == 0.0 {
        return;
    }
    let f = scale * p.deriv(r) / r;
    for (o, c) in out.iter_mut().zip(x) {
        *o += f * c;
    }
}

pub const DEFAULT_VALIDATION_GRID: usize = 10_000;
pub const VALIDATION_TOLERANCE: f64 = 1e-12;

/// Outcome of checking a kernel/potential pair for the two-agent convergence
/// hypotheses: `U'(r) phi'(r) <= 0` and `|U'|^2 >= c_R |U|` on `[0, R]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub radius: f64,
    pub grid: usize,
    pub tolerance: f64,
    pub sign_condition_ok: bool,
    pub sign_violations: usize,
    pub max_sign_product: f64,
    pub first_violation_radius: Option<f64>,
    /// Smallest observed `|U'|^2 / U` over points with `U > 0`; `None` if `U`
    /// vanishes on the whole grid.
    pub contact_constant: Option<f64>,
    pub contact_constant_radius: Option<f64>,
    pub contact_condition_ok: bool,
    pub passed: bool,
}

pub fn validate_pair(k: &KernelSpec, p: &PotentialSpec, radius: f64, grid: usize) -> Result<ValidationReport> {
    k.validate()?;
    p.validate()?;
    validate_profiles(k, p, radius, grid)
}

/// Grid check of the pair hypotheses for arbitrary radial profiles.
///
/// The contact constant is refined beyond the grid: around every grid-local
/// minimum of `|U'|^2/U` a golden-section search runs, and next to every grid
/// zero of `U` the ratio is probed at geometrically shrinking offsets. This
/// is what exposes higher-than-quadratic contact, where the ratio tends to
/// zero only at distances far below the grid spacing.
pub fn validate_profiles<K, U>(kernel: &K, potential: &U, radius: f64, grid: usize) -> Result<ValidationReport>
where
    K: RadialProfile + ?Sized,
    U: RadialProfile + ?Sized,
{
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(invalid_state(format!("validation radius must be positive, got {radius}")));
    }
    if grid < 100 {
        return Err(invalid_state(format!("validation grid needs at least 100 points, got {grid}")));
    }
    let tol = VALIDATION_TOLERANCE;
    let step = radius / (grid - 1) as f64;
    let rs: Vec<f64> = (0..grid).map(|i| i as f64 * step).collect();

    let mut sign_violations = 0;
    let mut max_sign_product = f64::NEG_INFINITY;
    let mut first_violation_radius = None;
    for &r in &rs {
        let prod = potential.deriv(r) * kernel.deriv(r);
        max_sign_product = max_sign_product.max(prod);
        if prod > tol {
            sign_violations += 1;
            first_violation_radius.get_or_insert(r);
        }
    }

    let ratio = |r: f64| -> Option<f64> {
        let u = potential.value(r);
        if u > 0.0 {
            let du = potential.deriv(r);
            Some(du * du / u)
        } else {
            None
        }
    };
    let ratios: Vec<Option<f64>> = rs.iter().map(|&r| ratio(r)).collect();

    let mut best: Option<(f64, f64)> = None;
    let mut consider = |r: f64, val: Option<f64>| {
        if let Some(v) = val {
            if best.is_none_or(|(b, _)| v < b) {
                best = Some((v, r));
            }
        }
    };
    for (i, &r) in rs.iter().enumerate() {
        consider(r, ratios[i]);
    }
    for i in 0..grid {
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(grid - 1);
        match ratios[i] {
            Some(v) => {
                let left = ratios[lo].unwrap_or(f64::INFINITY);
                let right = ratios[hi].unwrap_or(f64::INFINITY);
                if v <= left && v <= right {
                    let (r, val) = golden_section_min(&ratio, rs[lo], rs[hi]);
                    consider(r, Some(val));
                }
            }
            None => {
                for j in [lo, hi] {
                    if j != i && ratios[j].is_some() {
                        let from = rs[j];
                        let to = rs[i];
                        let mut offset = from - to;
                        for _ in 0..80 {
                            offset *= 0.5;
                            let r = to + offset;
                            consider(r, ratio(r));
                        }
                    }
                }
            }
        }
    }

    let sign_condition_ok = sign_violations == 0;
    let contact_condition_ok = best.is_none_or(|(c, _)| c >= tol);
    Ok(ValidationReport {
        radius,
        grid,
        tolerance: tol,
        sign_condition_ok,
        sign_violations,
        max_sign_product,
        first_violation_radius,
        contact_constant: best.map(|b| b.0),
        contact_constant_radius: best.map(|b| b.1),
        contact_condition_ok,
        passed: sign_condition_ok && contact_condition_ok,
    })
}

fn golden_section_min<F>(f: &F, mut a: f64, mut b: f64) -> (f64, f64)
where
    F: Fn(f64) -> Option<f64>,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let eval = |r: f64| f(r).unwrap_or(f64::INFINITY);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    for _ in 0..100 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d);
        }
        if b - a <= f64::EPSILON * b.abs().max(1.0) {
            break;
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff<P: RadialProfile>(p: &P, r: f64, h: f64) -> f64 {
        (p.value(r + h) - p.value(r - h)) / (2.0 * h)
    }

    #[test]
    fn smooth_bump_values() {
        let k = KernelSpec::SmoothBump { r0: 1.0, amp: 1.0 };
        assert_eq!(k.value(0.0), 1.0);
        assert_eq!(k.value(1.0), 0.0);
        assert_eq!(k.value(2.0), 0.0);
        let v = k.value(std::f64::consts::FRAC_1_SQRT_2);
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn plateau_flat_region() {
        let k = KernelSpec::Plateau { amp: 2.0, r_flat: 0.25, r0: 0.5 };
        assert_eq!(kernel_eval(&k, 0.1).unwrap(), 2.0);
        assert_eq!(kernel_deriv(&k, 0.1).unwrap(), 0.0);
        assert_eq!(k.value(0.5), 0.0);
        assert!((k.value(0.375) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn negative_radius_rejected() {
        let k = KernelSpec::Constant { amp: 1.0 };
        assert!(kernel_eval(&k, -0.1).is_err());
        assert!(kernel_deriv(&k, -1.0).is_err());
        assert!(potential_eval(&PotentialSpec::QuadraticConfinement, -1.0).is_err());
    }

    #[test]
    fn kernel_derivatives_match_finite_differences() {
        let kernels = [
            KernelSpec::SmoothBump { r0: 1.3, amp: 2.0 },
            KernelSpec::Plateau { amp: 1.5, r_flat: 0.4, r0: 1.1 },
            KernelSpec::Constant { amp: 0.7 },
            KernelSpec::PowerTail { amp: 1.0, exponent: 0.8 },
            KernelSpec::PowerTail { amp: 3.0, exponent: 2.5 },
        ];
        let h = 1e-5;
        for k in &kernels {
            for i in 1..200 {
                let r = i as f64 * 0.0105;
                if let Some(r0) = k.support() {
                    if (r - r0).abs() < 1e-3 {
                        continue;
                    }
                }
                if let KernelSpec::Plateau { r_flat, .. } = k {
                    if (r - r_flat).abs() < 1e-3 {
                        continue;
                    }
                }
                let fd = central_diff(k, r, h);
                let exact = k.deriv(r);
                let err = (fd - exact).abs();
                assert!(
                    err <= 1e-6 * exact.abs().max(1e-3),
                    "{k:?} at r = {r}: fd {fd}, exact {exact}"
                );
            }
        }
    }

    #[test]
    fn compact_kernels_are_monotone() {
        for k in [
            KernelSpec::SmoothBump { r0: 0.8, amp: 1.0 },
            KernelSpec::Plateau { amp: 1.0, r_flat: 0.2, r0: 0.9 },
        ] {
            let mut prev = k.value(0.0);
            for i in 1..5000 {
                let v = k.value(i as f64 * 2e-4);
                assert!(v <= prev && v >= 0.0);
                prev = v;
            }
        }
    }

    #[test]
    fn potential_examples() {
        let q = PotentialSpec::QuadraticConfinement;
        assert_eq!(q.value(2.0), 2.0);
        assert_eq!(potential_grad(&q, &[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
        let w = PotentialSpec::IntervalWell { l0: 1.0, l1: 2.0 };
        assert_eq!(potential_eval(&w, 1.5).unwrap(), 0.0);
        assert_eq!(w.value(3.0), 1.0);
        assert_eq!(w.value(0.5), 0.25);
        for p in [q, w, PotentialSpec::QuadraticWell { l0: 0.5 }, PotentialSpec::None] {
            assert_eq!(potential_grad(&p, &[0.0, 0.0, 0.0]).unwrap(), vec![0.0; 3]);
        }
        assert_eq!(potential_grad(&PotentialSpec::None, &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn potential_gradient_matches_finite_differences() {
        let pots = [
            PotentialSpec::QuadraticConfinement,
            PotentialSpec::QuadraticWell { l0: 0.7 },
            PotentialSpec::IntervalWell { l0: 0.5, l1: 1.2 },
        ];
        let x = [0.9, -1.3];
        let h = 1e-6;
        for p in &pots {
            let g = potential_grad(p, &x).unwrap();
            for k in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let fd = (p.value(norm(&xp)) - p.value(norm(&xm))) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-7, "{p:?}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn validation_passes_for_decreasing_kernel_with_quadratic_well() {
        let k = KernelSpec::SmoothBump { r0: 2.0, amp: 1.0 };
        let p = PotentialSpec::QuadraticWell { l0: 0.5 };
        let rep = validate_pair(&k, &p, 3.0, DEFAULT_VALIDATION_GRID).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!((rep.contact_constant.unwrap() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn validation_passes_for_three_zone_pair() {
        let k = KernelSpec::Plateau { amp: 1.0, r_flat: 1.0, r0: 3.0 };
        let p = PotentialSpec::IntervalWell { l0: 1.0, l1: 2.0 };
        let rep = validate_pair(&k, &p, 4.0, DEFAULT_VALIDATION_GRID).unwrap();
        assert!(rep.sign_condition_ok && rep.contact_condition_ok, "{rep:?}");
    }

    struct Increasing {
        from: f64,
        to: f64,
    }

    impl RadialProfile for Increasing {
        fn value(&self, r: f64) -> f64 {
            r.clamp(self.from, self.to)
        }
        fn deriv(&self, r: f64) -> f64 {
            if r > self.from && r < self.to {
                1.0
            } else {
                0.0
            }
        }
    }

    #[test]
    fn validation_flags_increasing_kernel() {
        let p = PotentialSpec::IntervalWell { l0: 1.0, l1: 2.0 };
        let rep = validate_profiles(&Increasing { from: 2.0, to: 3.0 }, &p, 4.0, 1000).unwrap();
        assert!(!rep.sign_condition_ok);
        assert!(rep.first_violation_radius.unwrap() > 2.0);
        assert!(rep.contact_condition_ok);
        assert!(!rep.passed);
    }

    struct Quartic {
        l: f64,
    }

    impl RadialProfile for Quartic {
        fn value(&self, r: f64) -> f64 {
            (r - self.l).powi(4)
        }
        fn deriv(&self, r: f64) -> f64 {
            4.0 * (r - self.l).powi(3)
        }
    }

    #[test]
    fn validation_flags_quartic_contact() {
        let k = KernelSpec::Zero;
        // contact point on a grid node and off the grid
        for l in [1.0, 1.234_567_891] {
            let rep = validate_profiles(&k, &Quartic { l }, 3.0, 1001).unwrap();
            assert!(rep.sign_condition_ok);
            assert!(!rep.contact_condition_ok, "l = {l}: {rep:?}");
            assert!((rep.contact_constant_radius.unwrap() - l).abs() < 1e-3);
        }
    }

    #[test]
    fn validation_rejects_bad_arguments() {
        let k = KernelSpec::Zero;
        let p = PotentialSpec::QuadraticConfinement;
        assert!(validate_pair(&k, &p, 0.0, 1000).is_err());
        assert!(validate_pair(&k, &p, 1.0, 10).is_err());
    }
}
