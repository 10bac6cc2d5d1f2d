//! Integer relations among real numbers via lattice reduction.
//!
//! A relation for `v` is a nonzero integer vector `q` with `|q . v| <= tol`.
//! The search embeds `v` in the lattice spanned by the rows `(e_i, round(scale * v_i))`
//! and LLL-reduces it. Short reduced vectors have small last coordinate, so
//! their first `d` coordinates are relation candidates. Floating inputs mean
//! every answer is relative to `(tol, bound)`, never an exact statement.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_state, Result};

pub const DEFAULT_DELTA: f64 = 0.99;

/// LLL reduction of the rows of `basis` with Lovász parameter `delta`.
///
/// Exact integer arithmetic throughout: Gram-Schmidt data is kept as the
/// integral quantities `d_i = prod_{j<=i} |b*_j|^2` and `lambda_kj = d_j mu_kj`.
pub fn lll_reduce(basis: &[Vec<i64>], delta: f64) -> Result<Vec<Vec<i64>>> {
    if !(delta > 0.25 && delta < 1.0) {
        return Err(invalid_state(format!("LLL parameter must lie in (1/4, 1), got {delta}")));
    }
    let Some(first) = basis.first() else {
        return Ok(Vec::new());
    };
    let width = first.len();
    if basis.iter().any(|row| row.len() != width) {
        return Err(invalid_state("basis rows have different lengths"));
    }
    let rows: Vec<Vec<BigInt>> = basis.iter().map(|r| r.iter().map(|&c| BigInt::from(c)).collect()).collect();
    let reduced = IntegralLll::new(rows, delta).run()?;
    reduced
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|c| c.to_i64().ok_or_else(|| invalid_state("reduced basis entry exceeds 64 bits")))
                .collect()
        })
        .collect()
}

struct IntegralLll {
    b: Vec<Vec<BigInt>>,
    /// `d[i]` for `i = 0..=m`, with `d[0] = 1`; `d[i]` belongs to row `i - 1`.
    d: Vec<BigInt>,
    /// `lambda[k][j]` for `j < k` (0-based rows).
    lambda: Vec<Vec<BigInt>>,
    delta_num: BigInt,
    delta_den: BigInt,
}

fn dot_big(a: &[BigInt], b: &[BigInt]) -> BigInt {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl IntegralLll {
    fn new(b: Vec<Vec<BigInt>>, delta: f64) -> Self {
        let m = b.len();
        let den: i64 = 1 << 30;
        let num = (delta * den as f64).round() as i64;
        IntegralLll {
            b,
            d: vec![BigInt::zero(); m + 1],
            lambda: vec![vec![BigInt::zero(); m]; m],
            delta_num: BigInt::from(num),
            delta_den: BigInt::from(den),
        }
    }

    fn run(mut self) -> Result<Vec<Vec<BigInt>>> {
        let m = self.b.len();
        self.d[0] = BigInt::one();
        for k in 0..m {
            self.gram_schmidt_row(k)?;
        }
        let mut k = 1;
        while k < m {
            self.size_reduce(k, k - 1);
            // swap when q d_k d_{k-2} < p d_{k-1}^2 - q lambda^2   (delta = p/q)
            let lam = &self.lambda[k][k - 1];
            let lhs = &self.delta_den * &self.d[k + 1] * &self.d[k - 1];
            let rhs = &self.delta_num * &self.d[k] * &self.d[k] - &self.delta_den * lam * lam;
            if lhs < rhs {
                self.swap(k);
                k = k.saturating_sub(1).max(1);
            } else {
                for l in (0..k - 1).rev() {
                    self.size_reduce(k, l);
                }
                k += 1;
            }
        }
        Ok(self.b)
    }

    fn gram_schmidt_row(&mut self, k: usize) -> Result<()> {
        for j in 0..=k {
            let mut u = dot_big(&self.b[k], &self.b[j]);
            for i in 0..j {
                u = (&self.d[i + 1] * &u - &self.lambda[k][i] * &self.lambda[j][i]) / &self.d[i];
            }
            if j < k {
                self.lambda[k][j] = u;
            } else {
                if u.is_zero() {
                    return Err(invalid_state("basis rows are linearly dependent"));
                }
                self.d[k + 1] = u;
            }
        }
        Ok(())
    }

    fn size_reduce(&mut self, k: usize, l: usize) {
        let dl = &self.d[l + 1];
        let two_lam: BigInt = &self.lambda[k][l] * 2;
        if two_lam.abs() <= *dl {
            return;
        }
        // nearest integer to lambda / d_l
        let q = (two_lam + dl).div_floor(&(dl * 2));
        let bl = self.b[l].clone();
        for (a, c) in self.b[k].iter_mut().zip(&bl) {
            *a -= &q * c;
        }
        self.lambda[k][l] -= &q * dl;
        for i in 0..l {
            let t = &q * &self.lambda[l][i];
            self.lambda[k][i] -= t;
        }
    }

    fn swap(&mut self, k: usize) {
        let m = self.b.len();
        self.b.swap(k, k - 1);
        for j in 0..k - 1 {
            let t = std::mem::take(&mut self.lambda[k][j]);
            self.lambda[k][j] = std::mem::replace(&mut self.lambda[k - 1][j], t);
        }
        let lam = self.lambda[k][k - 1].clone();
        let big_b = (&self.d[k - 1] * &self.d[k + 1] + &lam * &lam) / &self.d[k];
        for i in (k + 1)..m {
            let t = self.lambda[i][k].clone();
            self.lambda[i][k] = (&self.d[k + 1] * &self.lambda[i][k - 1] - &lam * &t) / &self.d[k];
            self.lambda[i][k - 1] = (&big_b * &t + &lam * &self.lambda[i][k]) / &self.d[k + 1];
        }
        self.d[k] = big_b;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationQuery {
    pub v: Vec<f64>,
    pub tol: f64,
    pub bound: i64,
    /// Lattice embedding scale; must be at least `1/tol`.
    pub scale: f64,
}

impl RelationQuery {
    /// Query with the default embedding scale `10 / tol`.
    pub fn new(v: Vec<f64>, tol: f64, bound: i64) -> Self {
        RelationQuery { v, tol, bound, scale: 10.0 / tol }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.v.is_empty() {
            return Err(invalid_state("relation query needs at least one number"));
        }
        if !self.v.iter().all(|c| c.is_finite()) {
            return Err(invalid_state("relation query has non-finite entries"));
        }
        if !(self.tol > 0.0) || self.bound < 1 {
            return Err(invalid_state("relation query needs tol > 0 and bound >= 1"));
        }
        if !(self.scale >= 1.0 / self.tol) {
            return Err(invalid_state("embedding scale must be at least 1/tol"));
        }
        let biggest = self.v.iter().fold(0.0f64, |a, c| a.max(c.abs())) * self.scale;
        if biggest >= 2f64.powi(62) {
            return Err(invalid_state("scaled entries exceed 62 bits; lower the scale"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum RelationResult {
    Found { q: Vec<i64>, residual: f64 },
    /// No relation with `|q . v| <= tol` has `max |q_i| <= certified_bound`.
    NoneFound { certified_bound: f64 },
}

impl RelationResult {
    pub fn is_found(&self) -> bool {
        matches!(self, RelationResult::Found { .. })
    }
}

/// `|q . v|` with compensated summation.
pub fn residual(q: &[i64], v: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (&a, &b) in q.iter().zip(v) {
        let term = a as f64 * b;
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    (sum + comp).abs()
}

/// Coefficient range of the combination scan over reduced rows.
fn combination_radius(d: usize) -> i64 {
    match d {
        0..=4 => 2,
        5..=8 => 1,
        _ => 0,
    }
}

pub fn integer_relation(query: &RelationQuery) -> Result<RelationResult> {
    query.validate()?;
    let d = query.v.len();
    let basis: Vec<Vec<i64>> = (0..d)
        .map(|i| {
            let mut row = vec![0i64; d + 1];
            row[i] = 1;
            row[d] = (query.scale * query.v[i]).round() as i64;
            row
        })
        .collect();
    let reduced = lll_reduce(&basis, DEFAULT_DELTA)?;

    let accept = |q: &[i64]| -> Option<f64> {
        if q.iter().all(|&c| c == 0) || q.iter().any(|c| c.abs() > query.bound) {
            return None;
        }
        let r = residual(q, &query.v);
        (r <= query.tol).then_some(r)
    };

    // candidates ordered by (max coefficient, residual) so the answer is deterministic
    let mut best: Option<(i64, f64, Vec<i64>)> = None;
    let mut offer = |q: Vec<i64>| {
        if let Some(r) = accept(&q) {
            let height = q.iter().map(|c| c.abs()).max().unwrap_or(0);
            let better = match &best {
                None => true,
                Some((h, br, _)) => (height, r) < (*h, *br),
            };
            if better {
                best = Some((height, r, q));
            }
        }
    };
    for row in &reduced {
        offer(row[..d].to_vec());
    }
    let radius = combination_radius(d);
    if radius > 0 {
        let width = (2 * radius + 1) as usize;
        let total = width.pow(d as u32);
        for code in 0..total {
            let mut c = code;
            let mut q = vec![0i64; d];
            let mut nonzero = 0;
            for row in &reduced {
                let coef = (c % width) as i64 - radius;
                c /= width;
                if coef != 0 {
                    nonzero += 1;
                    for (qi, ri) in q.iter_mut().zip(row) {
                        *qi += coef * ri;
                    }
                }
            }
            if nonzero >= 2 {
                offer(q);
            }
        }
    }
    if let Some((_, residual, mut q)) = best {
        // sign convention: first nonzero coefficient positive
        if q.iter().find(|&&c| c != 0).is_some_and(|&c| c < 0) {
            q.iter_mut().for_each(|c| *c = -*c);
        }
        debug_assert!(residual <= query.tol);
        return Ok(RelationResult::Found { q, residual });
    }
    Ok(RelationResult::NoneFound { certified_bound: certified_bound(&reduced, query) })
}

/// Largest `B` such that no relation with `max |q_i| <= B` can exist.
///
/// Every lattice vector is at least as long as the shortest Gram-Schmidt
/// vector of any basis. A relation with height `B` gives the lattice vector
/// `(q, sum q_i round(scale v_i))` of squared length at most
/// `d B^2 + (scale tol + d B / 2)^2`; solve for the largest `B` below that length.
fn certified_bound(reduced: &[Vec<i64>], query: &RelationQuery) -> f64 {
    let d = query.v.len() as f64;
    let min_gs = gram_schmidt_min_norm(reduced);
    let c = query.scale * query.tol;
    // d B^2 + (c + d B/2)^2 = m^2  ->  (d + d^2/4) B^2 + c d B + c^2 - m^2 = 0
    let a = d + d * d / 4.0;
    let b = c * d;
    let cc = c * c - min_gs * min_gs;
    if cc >= 0.0 {
        return 0.0;
    }
    let root = (-b + (b * b - 4.0 * a * cc).sqrt()) / (2.0 * a);
    // strict inequality needed; shave a relative ulp-scale margin
    (root * (1.0 - 1e-12)).max(0.0)
}

fn gram_schmidt_min_norm(rows: &[Vec<i64>]) -> f64 {
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    let mut min_sq = f64::INFINITY;
    for row in rows {
        let mut w: Vec<f64> = row.iter().map(|&c| c as f64).collect();
        for u in &ortho {
            let uu: f64 = u.iter().map(|c| c * c).sum();
            let mu = w.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() / uu;
            for (a, b) in w.iter_mut().zip(u) {
                *a -= mu * b;
            }
        }
        min_sq = min_sq.min(w.iter().map(|c| c * c).sum());
        ortho.push(w);
    }
    min_sq.sqrt()
}

/// Dimension of the rational span of `v`, relative to `(tol, bound)`.
///
/// Each relation found expresses some coordinate `v_k` (with `q_k != 0`) as a
/// rational combination of the others; dropping that coordinate leaves the
/// rational span unchanged, so the search repeats on the shorter vector.
pub fn kronecker_dimension(v: &[f64], tol: f64, bound: i64) -> Result<usize> {
    if v.len() > 16 {
        return Err(invalid_state(format!("kronecker dimension supports up to 16 numbers, got {}", v.len())));
    }
    let mut current = v.to_vec();
    while !current.is_empty() {
        match integer_relation(&RelationQuery::new(current.clone(), tol, bound))? {
            RelationResult::Found { q, .. } => {
                // eliminate the coordinate with the largest |q_k|, it is the best conditioned pivot
                let (k, _) = q.iter().enumerate().max_by_key(|(_, c)| c.abs()).expect("relation is nonzero");
                current.remove(k);
            }
            RelationResult::NoneFound { .. } => break,
        }
    }
    Ok(current.len())
}
