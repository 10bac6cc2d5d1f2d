//! Right-hand sides of the alignment systems on the ensemble space.
//!
//! Three systems share one evaluation loop: plain alignment (`NoForce`),
//! alignment plus an external confining potential, and alignment plus a
//! pairwise interaction potential. All pair sums run over `i != j` in
//! `O(N^2)`; on the torus separations use the minimal image.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_state, Error, Result};
use crate::geometry::{displacement_into, wrap_in_place, Domain};
use crate::model::{add_potential_grad, KernelSpec, PotentialSpec, RadialProfile};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Force {
    #[default]
    NoForce,
    /// `-grad U(x_i)` on each agent.
    Confinement { potential: PotentialSpec },
    /// `-(1/N) sum_j grad U(x_i - x_j)`.
    Pairwise { potential: PotentialSpec },
}

impl Force {
    pub fn potential(&self) -> Option<&PotentialSpec> {
        match self {
            Force::NoForce => None,
            Force::Confinement { potential } | Force::Pairwise { potential } => Some(potential),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub domain: Domain,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub force: Force,
    pub n_agents: usize,
    /// Agent masses; only the sticky model reads them. `None` means unit masses.
    #[serde(default)]
    pub masses: Option<Vec<f64>>,
}

impl SystemSpec {
    pub fn new(domain: Domain, kernel: KernelSpec, force: Force, n_agents: usize) -> Self {
        SystemSpec { domain, kernel, force, n_agents, masses: None }
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.kernel.validate()?;
        if self.n_agents < 2 {
            return Err(invalid_state(format!("need at least 2 agents, got {}", self.n_agents)));
        }
        if let Some(p) = self.force.potential() {
            p.validate()?;
            if self.domain.is_torus() {
                return Err(invalid_state("potential forces require the open domain"));
            }
        }
        if let Some(m) = &self.masses {
            if m.len() != self.n_agents {
                return Err(invalid_state(format!("{} masses for {} agents", m.len(), self.n_agents)));
            }
            if !m.iter().all(|&w| w > 0.0 && w.is_finite()) {
                return Err(invalid_state("masses must be positive and finite"));
            }
        }
        Ok(())
    }

    pub fn mass_vector(&self) -> Vec<f64> {
        self.masses.clone().unwrap_or_else(|| vec![1.0; self.n_agents])
    }
}

/// A phase point `(x, v)` with the running quadratures carried along the flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleState {
    pub t: f64,
    /// Row-major `N x n` positions.
    pub x: Vec<f64>,
    /// Row-major `N x n` velocities.
    pub v: Vec<f64>,
    /// `int_0^t sum_{i != j} phi_ij ds`
    pub acc_phi: f64,
    /// `int_0^t sum_{i,j} phi_ij |v_i - v_j|^2 ds`
    pub acc_diss: f64,
    /// `int_0^t I_1 ds`
    pub acc_i1: f64,
}

impl EnsembleState {
    pub fn new(x: Vec<f64>, v: Vec<f64>) -> Self {
        EnsembleState { t: 0.0, x, v, acc_phi: 0.0, acc_diss: 0.0, acc_i1: 0.0 }
    }

    pub fn n_agents(&self, dim: usize) -> usize {
        self.x.len() / dim
    }

    pub fn pos(&self, i: usize, dim: usize) -> &[f64] {
        &self.x[i * dim..(i + 1) * dim]
    }

    pub fn vel(&self, i: usize, dim: usize) -> &[f64] {
        &self.v[i * dim..(i + 1) * dim]
    }

    /// Checks shape and finiteness against a system and wraps torus positions.
    pub fn validated(mut self, sys: &SystemSpec) -> Result<Self> {
        self.check(sys)?;
        wrap_in_place(&mut self.x, &sys.domain);
        Ok(self)
    }

    pub fn check(&self, sys: &SystemSpec) -> Result<()> {
        let len = sys.n_agents * sys.dim();
        if self.x.len() != len || self.v.len() != len {
            return Err(invalid_state(format!(
                "state has {} positions and {} velocities, system expects {len}",
                self.x.len(),
                self.v.len()
            )));
        }
        let finite = self.t.is_finite()
            && self.x.iter().chain(&self.v).all(|c| c.is_finite())
            && [self.acc_phi, self.acc_diss, self.acc_i1].iter().all(|c| c.is_finite());
        if !finite {
            return Err(invalid_state("non-finite state"));
        }
        Ok(())
    }

    pub(crate) fn to_augmented(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.x.len() * 2 + 3);
        y.extend_from_slice(&self.x);
        y.extend_from_slice(&self.v);
        y.extend_from_slice(&[self.acc_phi, self.acc_diss, self.acc_i1]);
        y
    }

    pub(crate) fn from_augmented(t: f64, y: &[f64]) -> Self {
        let m = (y.len() - 3) / 2;
        EnsembleState {
            t,
            x: y[..m].to_vec(),
            v: y[m..2 * m].to_vec(),
            acc_phi: y[2 * m],
            acc_diss: y[2 * m + 1],
            acc_i1: y[2 * m + 2],
        }
    }
}

/// Time derivative of the augmented state.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivative {
    pub dx: Vec<f64>,
    pub dv: Vec<f64>,
    /// `sum_{i != j} phi_ij`
    pub dphi: f64,
    /// `sum_{i,j} phi_ij |v_i - v_j|^2`
    pub ddiss: f64,
    /// `(1/N) sum_{i,j} phi_ij |v_i - v_j|`
    pub di1: f64,
}

pub fn rhs(s: &EnsembleState, sys: &SystemSpec) -> Result<Derivative> {
    s.check(sys)?;
    let y = s.to_augmented();
    let mut out = vec![0.0; y.len()];
    let mut scratch = vec![0.0; sys.dim()];
    rhs_into(&y, sys, &mut out, &mut scratch);
    let m = s.x.len();
    Ok(Derivative {
        dx: out[..m].to_vec(),
        dv: out[m..2 * m].to_vec(),
        dphi: out[2 * m],
        ddiss: out[2 * m + 1],
        di1: out[2 * m + 2],
    })
}

/// Field evaluation on the flat augmented layout `[x | v | acc_phi, acc_diss, acc_i1]`.
/// `scratch` must have length `n`.
pub(crate) fn rhs_into(y: &[f64], sys: &SystemSpec, out: &mut [f64], scratch: &mut [f64]) {
    let n = sys.dim();
    let big_n = sys.n_agents;
    let m = big_n * n;
    let inv_n = 1.0 / big_n as f64;
    let (x, rest) = y.split_at(m);
    let v = &rest[..m];
    let (dx, rest_out) = out.split_at_mut(m);
    let (dv, acc_out) = rest_out.split_at_mut(m);
    dx.copy_from_slice(v);
    dv.fill(0.0);

    let pairwise = match sys.force {
        Force::Pairwise { potential } => Some(potential),
        _ => None,
    };
    let skip_kernel = matches!(sys.kernel, KernelSpec::Zero);
    let mut dphi = 0.0;
    let mut ddiss = 0.0;
    let mut di1 = 0.0;
    for i in 0..big_n {
        let xi = &x[i * n..(i + 1) * n];
        let vi = &v[i * n..(i + 1) * n];
        for j in (i + 1)..big_n {
            let xj = &x[j * n..(j + 1) * n];
            let vj = &v[j * n..(j + 1) * n];
            displacement_into(xi, xj, &sys.domain, scratch);
            let r = scratch.iter().map(|c| c * c).sum::<f64>().sqrt();
            if !skip_kernel {
                let phi = sys.kernel.value(r);
                if phi != 0.0 {
                    let mut vv = 0.0;
                    let w = phi * inv_n;
                    for k in 0..n {
                        let dvk = vj[k] - vi[k];
                        vv += dvk * dvk;
                        dv[i * n + k] += w * dvk;
                        dv[j * n + k] -= w * dvk;
                    }
                    dphi += 2.0 * phi;
                    ddiss += 2.0 * phi * vv;
                    di1 += 2.0 * phi * vv.sqrt() * inv_n;
                }
            }
            if let Some(p) = &pairwise {
                // grad U is odd: agent j receives the opposite contribution
                let (head, tail) = dv.split_at_mut(j * n);
                add_potential_grad(p, scratch, -inv_n, &mut head[i * n..(i + 1) * n]);
                add_potential_grad(p, scratch, inv_n, &mut tail[..n]);
            }
        }
    }
    if let Force::Confinement { potential } = &sys.force {
        for i in 0..big_n {
            add_potential_grad(potential, &x[i * n..(i + 1) * n], -1.0, &mut dv[i * n..(i + 1) * n]);
        }
    }
    acc_out[0] = dphi;
    acc_out[1] = ddiss;
    acc_out[2] = di1;
}

/// `sum_{i != j} phi(|x_i - x_j|)` over ordered pairs.
pub fn interaction_sum(s: &EnsembleState, sys: &SystemSpec) -> f64 {
    let n = sys.dim();
    let mut scratch = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..sys.n_agents {
        for j in (i + 1)..sys.n_agents {
            displacement_into(s.pos(i, n), s.pos(j, n), &sys.domain, &mut scratch);
            total += 2.0 * sys.kernel.value(crate::geometry::norm(&scratch));
        }
    }
    total
}

/// Divergence of the ensemble field, `-(n/N) sum_{i != j} phi_ij`.
/// Potential forces depend on positions only and do not contribute.
pub fn divergence(s: &EnsembleState, sys: &SystemSpec) -> f64 {
    -(sys.dim() as f64) / sys.n_agents as f64 * interaction_sum(s, sys)
}

fn means(flat: &[f64], n: usize) -> Vec<f64> {
    let count = (flat.len() / n) as f64;
    let mut out = vec![0.0; n];
    for chunk in flat.chunks_exact(n) {
        for (o, c) in out.iter_mut().zip(chunk) {
            *o += c;
        }
    }
    out.iter_mut().for_each(|o| *o /= count);
    out
}

/// Mean position (open space only, `None` on the torus) and mean velocity.
pub fn conserved_means(s: &EnsembleState, sys: &SystemSpec) -> (Option<Vec<f64>>, Vec<f64>) {
    let n = sys.dim();
    let xbar = if sys.domain.is_torus() { None } else { Some(means(&s.x, n)) };
    (xbar, means(&s.v, n))
}

/// Projection onto the null space `xbar = vbar = 0`.
pub fn galilean_project(s: &EnsembleState, sys: &SystemSpec) -> Result<EnsembleState> {
    if sys.domain.is_torus() {
        return Err(Error::Unsupported("mean position is not defined on the torus".into()));
    }
    s.check(sys)?;
    let n = sys.dim();
    let xbar = means(&s.x, n);
    let vbar = means(&s.v, n);
    let mut out = s.clone();
    for chunk in out.x.chunks_exact_mut(n) {
        for (c, m) in chunk.iter_mut().zip(&xbar) {
            *c -= m;
        }
    }
    for chunk in out.v.chunks_exact_mut(n) {
        for (c, m) in chunk.iter_mut().zip(&vbar) {
            *c -= m;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat_kernel() -> KernelSpec {
        KernelSpec::Plateau { amp: 1.0, r_flat: 1.0, r0: 2.0 }
    }

    #[test]
    fn torus_pair_example() {
        let sys = SystemSpec::new(Domain::torus(1), flat_kernel(), Force::NoForce, 2);
        let s = EnsembleState::new(vec![0.0, 0.5], vec![1.0, -1.0]);
        let d = rhs(&s, &sys).unwrap();
        assert_eq!(d.dv, vec![-1.0, 1.0]);
        assert_eq!(d.dx, vec![1.0, -1.0]);
        assert_eq!(d.dphi, 2.0);
        assert_eq!(d.ddiss, 8.0);
        assert_eq!(d.di1, 2.0);
    }

    #[test]
    fn torus_pair_interacts_across_the_seam() {
        let sys = SystemSpec::new(Domain::torus(1), flat_kernel(), Force::NoForce, 2);
        let s = EnsembleState::new(vec![0.1, 6.2], vec![1.0, -1.0]);
        assert_eq!(rhs(&s, &sys).unwrap().dv, vec![-1.0, 1.0]);
    }

    #[test]
    fn pairwise_quadratic_example() {
        let sys = SystemSpec::new(
            Domain::open(1),
            KernelSpec::Zero,
            Force::Pairwise { potential: PotentialSpec::QuadraticConfinement },
            2,
        );
        let s = EnsembleState::new(vec![0.0, 1.0], vec![0.0, 0.0]);
        assert_eq!(rhs(&s, &sys).unwrap().dv, vec![0.5, -0.5]);
    }

    #[test]
    fn free_flight() {
        let sys = SystemSpec::new(Domain::open(2), KernelSpec::Zero, Force::NoForce, 3);
        let s = EnsembleState::new(vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let d = rhs(&s, &sys).unwrap();
        assert!(d.dv.iter().all(|c| *c == 0.0));
        assert_eq!(d.dphi, 0.0);
        assert_eq!(d.dx, s.v);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let sys = SystemSpec::new(Domain::open(2), KernelSpec::Zero, Force::NoForce, 3);
        let s = EnsembleState::new(vec![0.0; 5], vec![0.0; 6]);
        assert!(matches!(rhs(&s, &sys), Err(Error::InvalidState(_))));
    }

    #[test]
    fn divergence_examples() {
        let sys = SystemSpec::new(Domain::torus(1), flat_kernel(), Force::NoForce, 2);
        let s = EnsembleState::new(vec![0.0, 0.5], vec![0.0, 0.0]);
        assert_eq!(divergence(&s, &sys), -1.0);

        let far = EnsembleState::new(vec![0.0, 3.0], vec![0.0, 0.0]);
        assert_eq!(divergence(&far, &sys), 0.0);

        let c = 0.75;
        let sys3 = SystemSpec::new(
            Domain::open(2),
            KernelSpec::Plateau { amp: c, r_flat: 1.0, r0: 1.5 },
            Force::NoForce,
            3,
        );
        let s3 = EnsembleState::new(vec![0.0, 0.0, 0.5, 0.0, 10.0, 10.0], vec![0.0; 6]);
        assert!((divergence(&s3, &sys3) - (-(2.0 / 3.0) * 2.0 * c)).abs() < 1e-15);
    }

    #[test]
    fn divergence_ignores_forces() {
        let base = SystemSpec::new(Domain::open(2), flat_kernel(), Force::NoForce, 3);
        let mut forced = base.clone();
        forced.force = Force::Pairwise { potential: PotentialSpec::IntervalWell { l0: 0.2, l1: 0.4 } };
        let s = EnsembleState::new(vec![0.0, 0.0, 0.5, 0.1, 1.2, 0.3], vec![0.3, -0.2, 0.1, 0.0, 0.4, 0.5]);
        assert_eq!(divergence(&s, &base), divergence(&s, &forced));
    }

    fn field(y: &[f64], sys: &SystemSpec) -> Vec<f64> {
        let mut out = vec![0.0; y.len()];
        let mut scratch = vec![0.0; sys.dim()];
        rhs_into(y, sys, &mut out, &mut scratch);
        out
    }

    #[test]
    fn divergence_is_jacobian_trace() {
        let systems = [
            SystemSpec::new(Domain::torus(2), KernelSpec::SmoothBump { r0: 1.5, amp: 1.3 }, Force::NoForce, 4),
            SystemSpec::new(
                Domain::open(2),
                KernelSpec::Plateau { amp: 2.0, r_flat: 0.3, r0: 1.2 },
                Force::Pairwise { potential: PotentialSpec::QuadraticWell { l0: 0.4 } },
                3,
            ),
            SystemSpec::new(
                Domain::open(1),
                KernelSpec::PowerTail { amp: 1.0, exponent: 0.5 },
                Force::Confinement { potential: PotentialSpec::QuadraticConfinement },
                4,
            ),
        ];
        let states = [
            EnsembleState::new(vec![0.1, 0.2, 0.8, 0.4, 0.5, 1.1, 6.1, 0.3], vec![0.5, -0.1, 0.2, 0.3, -0.4, 0.1, 0.0, 0.7]),
            EnsembleState::new(vec![0.0, 0.0, 0.6, 0.2, 0.1, 0.9], vec![0.5, -0.1, 0.2, 0.3, -0.4, 0.1]),
            EnsembleState::new(vec![0.0, 0.6, -1.0, 2.5], vec![0.5, -0.1, 0.2, 0.3]),
        ];
        let h = 1e-6;
        for (sys, s) in systems.iter().zip(&states) {
            let y = s.to_augmented();
            let m = s.x.len();
            let mut trace = 0.0;
            for k in 0..2 * m {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[k] += h;
                ym[k] -= h;
                trace += (field(&yp, sys)[k] - field(&ym, sys)[k]) / (2.0 * h);
            }
            let div = divergence(s, sys);
            assert!(div < 0.0);
            assert!((trace - div).abs() <= 1e-4 * div.abs(), "trace {trace} vs {div}");
        }
    }

    #[test]
    fn galilean_examples() {
        let sys = SystemSpec::new(Domain::open(1), KernelSpec::Zero, Force::NoForce, 2);
        let s = EnsembleState::new(vec![1.0, 3.0], vec![2.0, 4.0]);
        let p = galilean_project(&s, &sys).unwrap();
        assert_eq!(p.x, vec![-1.0, 1.0]);
        assert_eq!(p.v, vec![-1.0, 1.0]);
        assert_eq!(galilean_project(&p, &sys).unwrap(), p);
        let (xbar, vbar) = conserved_means(&s, &sys);
        assert_eq!(xbar.unwrap(), vec![2.0]);
        assert_eq!(vbar, vec![3.0]);

        let torus = SystemSpec::new(Domain::torus(1), KernelSpec::Zero, Force::NoForce, 2);
        assert!(matches!(galilean_project(&s, &torus), Err(Error::Unsupported(_))));
        assert!(conserved_means(&s, &torus).0.is_none());
    }

    fn state_strategy(len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(-2.0f64..2.0, len),
            prop::collection::vec(-1.0f64..1.0, len),
        )
    }

    fn pairwise_sys() -> SystemSpec {
        SystemSpec::new(
            Domain::open(2),
            KernelSpec::SmoothBump { r0: 1.5, amp: 1.0 },
            Force::Pairwise { potential: PotentialSpec::IntervalWell { l0: 0.3, l1: 0.8 } },
            4,
        )
    }

    proptest! {
        #[test]
        fn projection_centers_means((x, v) in state_strategy(8)) {
            let sys = pairwise_sys();
            let p = galilean_project(&EnsembleState::new(x, v), &sys).unwrap();
            let (xbar, vbar) = conserved_means(&p, &sys);
            for c in xbar.unwrap().iter().chain(&vbar) {
                prop_assert!(c.abs() <= 1e-15);
            }
        }

        #[test]
        fn permutation_equivariance((x, v) in state_strategy(8), shift in 1usize..4) {
            let sys = pairwise_sys();
            let n = 2;
            let s = EnsembleState::new(x.clone(), v.clone());
            let perm: Vec<usize> = (0..4).map(|i| (i + shift) % 4).collect();
            let mut px = vec![0.0; 8];
            let mut pv = vec![0.0; 8];
            for (new, &old) in perm.iter().enumerate() {
                px[new * n..(new + 1) * n].copy_from_slice(&x[old * n..(old + 1) * n]);
                pv[new * n..(new + 1) * n].copy_from_slice(&v[old * n..(old + 1) * n]);
            }
            let d = rhs(&s, &sys).unwrap();
            let pd = rhs(&EnsembleState::new(px, pv), &sys).unwrap();
            for (new, &old) in perm.iter().enumerate() {
                for k in 0..n {
                    prop_assert!((pd.dv[new * n + k] - d.dv[old * n + k]).abs() <= 1e-13);
                }
            }
            prop_assert!((pd.dphi - d.dphi).abs() <= 1e-12);
        }

        #[test]
        fn translation_and_galilean_invariance((x, v) in state_strategy(8), c in -5.0f64..5.0, w in -3.0f64..3.0) {
            let sys = pairwise_sys();
            let d = rhs(&EnsembleState::new(x.clone(), v.clone()), &sys).unwrap();
            let shifted: Vec<f64> = x.iter().map(|a| a + c).collect();
            let boosted: Vec<f64> = v.iter().map(|a| a + w).collect();
            let ds = rhs(&EnsembleState::new(shifted, v.clone()), &sys).unwrap();
            let db = rhs(&EnsembleState::new(x, boosted), &sys).unwrap();
            for k in 0..8 {
                prop_assert!((ds.dv[k] - d.dv[k]).abs() <= 1e-12);
                prop_assert!((db.dv[k] - d.dv[k]).abs() <= 1e-12);
                prop_assert!((db.dx[k] - d.dx[k] - w).abs() <= 1e-12);
            }
        }
    }
}
