//! Fixed-step classical RK4 on the augmented state `(x, v, acc_phi, acc_diss, acc_i1)`.
//!
//! The quadratures ride inside the same Runge-Kutta tableau as the phase
//! variables, so they are integrated to the same order.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsSample;
use crate::dynamics::{rhs_into, EnsembleState, SystemSpec};
use crate::error::{invalid_state, Error, Result};
use crate::geometry::{distance_sq, min_image_coord, wrap_in_place};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationParams {
    pub h: f64,
    pub horizon: f64,
    pub sample_every: usize,
    /// Wrap torus positions back into the fundamental cell after each step.
    #[serde(default = "default_true")]
    pub wrap: bool,
    /// Weight of the cross term in the recorded modified pair energy.
    #[serde(default = "default_pair_eps")]
    pub pair_eps: f64,
}

fn default_true() -> bool {
    true
}

fn default_pair_eps() -> f64 {
    0.1
}

impl Default for IntegrationParams {
    fn default() -> Self {
        IntegrationParams { h: 1e-3, horizon: 10.0, sample_every: 100, wrap: true, pair_eps: 0.1 }
    }
}

impl IntegrationParams {
    pub fn new(h: f64, horizon: f64, sample_every: usize) -> Self {
        IntegrationParams { h, horizon, sample_every, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidConfig(format!("step size must be positive, got {}", self.h)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidConfig(format!("horizon must be nonnegative, got {}", self.horizon)));
        }
        if self.sample_every == 0 {
            return Err(Error::InvalidConfig("sample_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of steps to reach the horizon; the last one may be shorter than `h`.
    pub fn n_steps(&self) -> usize {
        if self.horizon == 0.0 {
            0
        } else {
            ((self.horizon / self.h) * (1.0 - 1e-12)).ceil().max(1.0) as usize
        }
    }
}

/// Reusable RK4 buffers for one system.
pub(crate) struct Stepper<'a> {
    sys: &'a SystemSpec,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(sys: &'a SystemSpec) -> Self {
        let len = 2 * sys.n_agents * sys.dim() + 3;
        Stepper {
            sys,
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            tmp: vec![0.0; len],
            scratch: vec![0.0; sys.dim()],
        }
    }

    /// One RK4 step of size `h` (may be negative). No wrapping.
    pub fn step(&mut self, y: &mut [f64], h: f64) {
        let sys = self.sys;
        rhs_into(y, sys, &mut self.k1, &mut self.scratch);
        for ((t, a), k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k1) {
            *t = a + 0.5 * h * k;
        }
        rhs_into(&self.tmp, sys, &mut self.k2, &mut self.scratch);
        for ((t, a), k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k2) {
            *t = a + 0.5 * h * k;
        }
        rhs_into(&self.tmp, sys, &mut self.k3, &mut self.scratch);
        for ((t, a), k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k3) {
            *t = a + h * k;
        }
        rhs_into(&self.tmp, sys, &mut self.k4, &mut self.scratch);
        let w = h / 6.0;
        for i in 0..y.len() {
            y[i] += w * (self.k1[i] + 2.0 * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
    }
}

fn wrap_positions(y: &mut [f64], sys: &SystemSpec) {
    let m = sys.n_agents * sys.dim();
    wrap_in_place(&mut y[..m], &sys.domain);
}

fn all_finite(y: &[f64]) -> bool {
    y.iter().all(|c| c.is_finite())
}

/// Advances `s` by one RK4 step of size `h`; torus positions are wrapped afterwards.
pub fn step_rk4(s: &EnsembleState, sys: &SystemSpec, h: f64) -> Result<EnsembleState> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid_state(format!("step size must be positive, got {h}")));
    }
    s.check(sys)?;
    let mut y = s.to_augmented();
    Stepper::new(sys).step(&mut y, h);
    wrap_positions(&mut y, sys);
    let t = s.t + h;
    if !all_finite(&y) {
        return Err(Error::NumericalBlowup { t });
    }
    Ok(EnsembleState::from_augmented(t, &y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<EnsembleState>,
    pub samples: Vec<DiagnosticsSample>,
    /// Smallest pairwise distance over every step of the run, endpoints included.
    pub min_pair_distance: f64,
}

impl TrajectoryRecord {
    pub fn final_state(&self) -> &EnsembleState {
        self.states.last().expect("a record always holds the initial sample")
    }

    pub fn final_sample(&self) -> &DiagnosticsSample {
        self.samples.last().expect("a record always holds the initial sample")
    }
}

/// Integration stopped on a non-finite state; carries everything recorded before that.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationFailure {
    pub t: f64,
    pub partial: TrajectoryRecord,
}

impl From<IntegrationFailure> for Error {
    fn from(f: IntegrationFailure) -> Self {
        Error::NumericalBlowup { t: f.t }
    }
}

fn min_distance_flat(y: &[f64], sys: &SystemSpec) -> f64 {
    let n = sys.dim();
    let mut best = f64::INFINITY;
    for i in 0..sys.n_agents {
        for j in (i + 1)..sys.n_agents {
            best = best.min(distance_sq(&y[i * n..(i + 1) * n], &y[j * n..(j + 1) * n], &sys.domain));
        }
    }
    best.sqrt()
}

/// Integrates from `s0` over `[s0.t, s0.t + horizon]`, sampling every `sample_every` steps and at the end.
pub fn integrate(
    s0: &EnsembleState,
    sys: &SystemSpec,
    params: &IntegrationParams,
) -> std::result::Result<TrajectoryRecord, IntegrationFailure> {
    let fail_early = |t: f64| IntegrationFailure {
        t,
        partial: TrajectoryRecord { times: vec![], states: vec![], samples: vec![], min_pair_distance: f64::NAN },
    };
    if params.validate().is_err() || s0.check(sys).is_err() {
        return Err(fail_early(s0.t));
    }
    let mut y = s0.to_augmented();
    if params.wrap {
        wrap_positions(&mut y, sys);
    }
    let t0 = s0.t;
    let start = EnsembleState::from_augmented(t0, &y);
    let mut record = TrajectoryRecord {
        times: vec![t0],
        samples: vec![DiagnosticsSample::compute(&start, sys, params.pair_eps)],
        states: vec![start],
        min_pair_distance: min_distance_flat(&y, sys),
    };
    let n_steps = params.n_steps();
    let mut stepper = Stepper::new(sys);
    for k in 1..=n_steps {
        let t_prev = t0 + (k - 1) as f64 * params.h;
        let t_next = if k == n_steps { t0 + params.horizon } else { t0 + k as f64 * params.h };
        stepper.step(&mut y, t_next - t_prev);
        if params.wrap {
            wrap_positions(&mut y, sys);
        }
        if !all_finite(&y) {
            return Err(IntegrationFailure { t: t_next, partial: record });
        }
        record.min_pair_distance = record.min_pair_distance.min(min_distance_flat(&y, sys));
        if k % params.sample_every == 0 || k == n_steps {
            let s = EnsembleState::from_augmented(t_next, &y);
            record.times.push(t_next);
            record.samples.push(DiagnosticsSample::compute(&s, sys, params.pair_eps));
            record.states.push(s);
        }
    }
    Ok(record)
}

/// Flow map `S_dt(s)` with steps of size at most `|h|`; `dt` may be negative.
pub fn flow(s: &EnsembleState, sys: &SystemSpec, dt: f64, h: f64) -> Result<EnsembleState> {
    s.check(sys)?;
    if !(h > 0.0) {
        return Err(invalid_state("step size must be positive"));
    }
    let mut y = s.to_augmented();
    let n_steps = (dt.abs() / h).ceil() as usize;
    if n_steps > 0 {
        let hs = dt / n_steps as f64;
        let mut stepper = Stepper::new(sys);
        for _ in 0..n_steps {
            stepper.step(&mut y, hs);
        }
    }
    wrap_positions(&mut y, sys);
    if !all_finite(&y) {
        return Err(Error::NumericalBlowup { t: s.t + dt });
    }
    Ok(EnsembleState::from_augmented(s.t + dt, &y))
}

/// Central difference `(f(S_delta s) - f(S_{-delta} s)) / (2 delta)` of an observable along the flow.
pub fn flow_derivative_fd<F>(s: &EnsembleState, sys: &SystemSpec, f: F, delta: f64, h: f64) -> Result<f64>
where
    F: Fn(&EnsembleState) -> f64,
{
    let fwd = flow(s, sys, delta, h)?;
    let bwd = flow(s, sys, -delta, h)?;
    Ok((f(&fwd) - f(&bwd)) / (2.0 * delta))
}

/// Determinant of the flow-map Jacobian `D S_t` at `s0`, by central differences
/// over all `2nN` phase coordinates. RK4 steps of size at most `h`.
pub fn flow_jacobian_fd(s0: &EnsembleState, sys: &SystemSpec, t: f64, delta: f64, h: f64) -> Result<f64> {
    s0.check(sys)?;
    let m = sys.n_agents * sys.dim();
    if 2 * m > 16 {
        return Err(invalid_state(format!("flow Jacobian limited to 16 phase coordinates, got {}", 2 * m)));
    }
    if !(1e-7..=1e-4).contains(&delta) {
        return Err(invalid_state(format!("difference step must lie in [1e-7, 1e-4], got {delta}")));
    }
    let period = sys.domain.period();
    let mut jac = DMatrix::<f64>::zeros(2 * m, 2 * m);
    for col in 0..2 * m {
        let mut plus = s0.clone();
        let mut minus = s0.clone();
        if col < m {
            plus.x[col] += delta;
            minus.x[col] -= delta;
        } else {
            plus.v[col - m] += delta;
            minus.v[col - m] -= delta;
        }
        let a = flow(&plus, sys, t, h)?;
        let b = flow(&minus, sys, t, h)?;
        for row in 0..m {
            let dx = a.x[row] - b.x[row];
            let dx = match period {
                Some(p) => min_image_coord(dx, p),
                None => dx,
            };
            jac[(row, col)] = dx / (2.0 * delta);
            jac[(m + row, col)] = (a.v[row] - b.v[row]) / (2.0 * delta);
        }
    }
    let det = jac.determinant();
    if !det.is_finite() || det == 0.0 {
        return Err(Error::NumericalBlowup { t: s0.t + t });
    }
    Ok(det)
}
