//! Seeded sampling, single trials, Monte Carlo sweeps and decay-rate fits.
//!
//! Trial `i` of a sweep with master seed `m` draws from ChaCha8 seeded with
//! `splitmix64(m ^ i)`. Positions are drawn before velocities, agent by agent,
//! coordinate by coordinate.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{cluster_census, CensusParams, ClusterCensus};
use crate::dynamics::{galilean_project, EnsembleState, SystemSpec};
use crate::error::{Error, Result};
use crate::geometry::wrap_in_place;
use crate::integrator::{integrate, IntegrationParams, TrajectoryRecord};

pub const DEFAULT_EPS_A: f64 = 1e-3;
/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959963984540054;
const CLIP_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum PositionLaw {
    UniformTorus,
    UniformBox { half_width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum VelocityLaw {
    UniformBall { radius: f64 },
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub positions: PositionLaw,
    pub velocities: VelocityLaw,
    #[serde(default)]
    pub galilean_center: bool,
    #[serde(default)]
    pub seed: u64,
}

impl SampleSpec {
    pub fn validate(&self, sys: &SystemSpec) -> Result<()> {
        match self.positions {
            PositionLaw::UniformTorus if !sys.domain.is_torus() => {
                return Err(Error::InvalidConfig("uniform torus positions need a torus domain".into()))
            }
            PositionLaw::UniformBox { half_width } if !(half_width > 0.0 && half_width.is_finite()) => {
                return Err(Error::InvalidConfig(format!("box half width must be positive, got {half_width}")))
            }
            _ => {}
        }
        let scale = match self.velocities {
            VelocityLaw::UniformBall { radius } => radius,
            VelocityLaw::Gaussian { sigma } => sigma,
        };
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("velocity scale must be positive, got {scale}")));
        }
        if self.galilean_center && sys.domain.is_torus() {
            return Err(Error::Unsupported("centering needs a mean position, which the torus lacks".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SampleSpec { seed, ..*self }
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn trial_seed(master: u64, i: u64) -> u64 {
    splitmix64(master ^ i)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn sample_initial(spec: &SampleSpec, sys: &SystemSpec) -> Result<EnsembleState> {
    sys.validate()?;
    spec.validate(sys)?;
    let n = sys.dim();
    let big_n = sys.n_agents;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = Vec::with_capacity(n * big_n);
    for _ in 0..n * big_n {
        x.push(match spec.positions {
            PositionLaw::UniformTorus => rng.random_range(0.0..sys.domain.period().expect("checked above")),
            PositionLaw::UniformBox { half_width } => rng.random_range(-half_width..half_width),
        });
    }
    wrap_in_place(&mut x, &sys.domain);
    let mut v = Vec::with_capacity(n * big_n);
    for _ in 0..big_n {
        match spec.velocities {
            VelocityLaw::Gaussian { sigma } => v.extend(gaussian_vec(&mut rng, n).into_iter().map(|g| sigma * g)),
            VelocityLaw::UniformBall { radius } => {
                let dir = loop {
                    let g = gaussian_vec(&mut rng, n);
                    let len = crate::geometry::norm(&g);
                    if len > 0.0 {
                        break g.into_iter().map(|c| c / len).collect::<Vec<_>>();
                    }
                };
                let u: f64 = rng.random();
                let r = radius * u.powf(1.0 / n as f64);
                v.extend(dir.into_iter().map(|c| r * c));
            }
        }
    }
    let s = EnsembleState::new(x, v);
    if spec.galilean_center {
        galilean_project(&s, sys)
    } else {
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialParams {
    pub integration: IntegrationParams,
    #[serde(default = "default_eps_a")]
    pub eps_a: f64,
    /// `None` scales the grouping tolerance to the initial velocity diameter.
    #[serde(default)]
    pub census: Option<CensusParams>,
    /// Fitting window `[t_lo, t_hi]`; `None` means `[1, T]`.
    #[serde(default)]
    pub fit_window: Option<(f64, f64)>,
}

fn default_eps_a() -> f64 {
    DEFAULT_EPS_A
}

impl TrialParams {
    pub fn new(integration: IntegrationParams) -> Self {
        TrialParams { integration, eps_a: DEFAULT_EPS_A, census: None, fit_window: None }
    }

    pub fn validate(&self) -> Result<()> {
        self.integration.validate()?;
        if !(self.eps_a > 0.0 && self.eps_a < 1.0) {
            return Err(Error::InvalidConfig(format!("alignment threshold must lie in (0, 1), got {}", self.eps_a)));
        }
        Ok(())
    }

    fn window(&self, t0: f64) -> (f64, f64) {
        self.fit_window.unwrap_or((t0 + 1.0, t0 + self.integration.horizon))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialOutcome {
    Completed,
    Blowup { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Slope of `ln y` against `t`.
    pub exp_rate: f64,
    /// Slope of `ln y` against `ln(1 + t)`.
    pub power_slope: f64,
    /// Root-mean-square residuals of the two fits.
    pub exp_residual: f64,
    pub power_residual: f64,
    pub samples: usize,
    /// Samples with `y <= 0` replaced by the clip floor.
    pub clipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub index: u64,
    pub seed: u64,
    pub outcome: TrialOutcome,
    pub t_final: f64,
    pub v2_initial: f64,
    pub v2_final: f64,
    pub v1_final: f64,
    pub align_diam_final: f64,
    /// `V2(T) <= eps_a * max(V2(0), 1)`.
    pub aligned: bool,
    /// Some pair has `|v_i - v_j|(T) <= eps_a`.
    pub pair_aligned: bool,
    pub acc_phi: f64,
    pub acc_i1: f64,
    pub census: Option<ClusterCensus>,
    pub min_distance: f64,
    /// Minimum distance stayed `>= r0` over the whole run.
    pub h_flag: bool,
    /// Fit of the velocity diameter over the fitting window.
    pub fit: Option<DecayFit>,
    /// `sup |v_1 - v_2| sqrt(1 + t)` over the fitting window, two agents only.
    pub sqrt_weighted_sup: Option<f64>,
}

fn min_pair_velocity_gap(s: &EnsembleState, n: usize, big_n: usize) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..big_n {
        for j in (i + 1)..big_n {
            let d: f64 = s.vel(i, n).iter().zip(s.vel(j, n)).map(|(a, b)| (a - b) * (a - b)).sum();
            best = best.min(d);
        }
    }
    best.sqrt()
}

fn summarize(
    index: u64,
    seed: u64,
    sys: &SystemSpec,
    params: &TrialParams,
    s0: &EnsembleState,
    record: &TrajectoryRecord,
    outcome: TrialOutcome,
) -> Result<TrialSummary> {
    let n = sys.dim();
    let first = &record.samples[0];
    let last = record.final_sample();
    let sf = record.final_state();
    let completed = outcome == TrialOutcome::Completed;
    let census_params = params.census.unwrap_or_else(|| CensusParams::scaled_to(first.align_diam));
    let census = if completed { Some(cluster_census(sf, sys, &census_params)?) } else { None };
    let h_flag = completed && sys.kernel.support().is_some_and(|r0| record.min_pair_distance >= r0);

    let (lo, hi) = params.window(s0.t);
    let (ts, ys): (Vec<f64>, Vec<f64>) = record
        .samples
        .iter()
        .filter(|p| p.t >= lo && p.t <= hi)
        .map(|p| (p.t, p.align_diam))
        .unzip();
    let fit = if completed { fit_decay_rate(&ts, &ys, (lo, hi)).ok() } else { None };
    let sqrt_weighted_sup = (completed && sys.n_agents == 2 && !ts.is_empty())
        .then(|| ts.iter().zip(&ys).map(|(t, y)| y * (1.0 + t).sqrt()).fold(0.0, f64::max));

    Ok(TrialSummary {
        index,
        seed,
        outcome,
        t_final: last.t,
        v2_initial: first.v2,
        v2_final: last.v2,
        v1_final: last.v1,
        align_diam_final: last.align_diam,
        aligned: completed && last.v2 <= params.eps_a * first.v2.max(1.0),
        pair_aligned: completed && min_pair_velocity_gap(sf, n, sys.n_agents) <= params.eps_a,
        acc_phi: last.acc_phi,
        acc_i1: last.acc_i1,
        census,
        min_distance: record.min_pair_distance,
        h_flag,
        fit,
        sqrt_weighted_sup,
    })
}

fn trial_from_state(index: u64, seed: u64, sys: &SystemSpec, s0: &EnsembleState, params: &TrialParams) -> Result<TrialSummary> {
    match integrate(s0, sys, &params.integration) {
        Ok(record) => summarize(index, seed, sys, params, s0, &record, TrialOutcome::Completed),
        Err(failure) if failure.partial.samples.is_empty() => {
            // integrate only returns an empty record for invalid input
            params.validate()?;
            s0.check(sys)?;
            Err(Error::NumericalBlowup { t: failure.t })
        }
        Err(failure) => {
            summarize(index, seed, sys, params, s0, &failure.partial, TrialOutcome::Blowup { t: failure.t })
        }
    }
}

/// Samples the initial state from `spec` and runs one trial.
pub fn run_trial(sys: &SystemSpec, spec: &SampleSpec, params: &TrialParams) -> Result<TrialSummary> {
    params.validate()?;
    let s0 = sample_initial(spec, sys)?;
    trial_from_state(0, spec.seed, sys, &s0, params)
}

/// Runs one trial from an explicit initial state.
pub fn run_trial_from(sys: &SystemSpec, s0: &EnsembleState, params: &TrialParams) -> Result<TrialSummary> {
    params.validate()?;
    sys.validate()?;
    trial_from_state(0, 0, sys, s0, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAggregate {
    pub trials: usize,
    pub completed: usize,
    pub blowups: usize,
    pub eps_a: f64,
    pub aligned: usize,
    pub aligned_fraction: f64,
    pub aligned_wilson95: (f64, f64),
    pub pair_aligned_fraction: f64,
    pub h_fraction: f64,
    /// Cluster count to number of completed trials.
    pub cluster_histogram: BTreeMap<usize, usize>,
    pub fraction_k_le_2n: f64,
    /// `ln(1/eps_a)`: for two agents, `acc_phi` above it forces alignment.
    pub interaction_threshold: Option<f64>,
    /// Non-aligned completed trials with `h_flag` or `acc_phi` below the threshold.
    pub non_aligned_explained: usize,
    pub non_aligned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub master_seed: u64,
    pub summaries: Vec<TrialSummary>,
    pub aggregate: SweepAggregate,
}

pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

fn fraction(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

/// Sequential fold over trial summaries in the given order.
pub fn aggregate(summaries: &[TrialSummary], dim: usize, n_agents: usize, eps_a: f64) -> SweepAggregate {
    let interaction_threshold = (n_agents == 2).then(|| (1.0 / eps_a).ln());
    let mut agg = SweepAggregate {
        trials: summaries.len(),
        completed: 0,
        blowups: 0,
        eps_a,
        aligned: 0,
        aligned_fraction: 0.0,
        aligned_wilson95: (0.0, 1.0),
        pair_aligned_fraction: 0.0,
        h_fraction: 0.0,
        cluster_histogram: BTreeMap::new(),
        fraction_k_le_2n: 0.0,
        interaction_threshold,
        non_aligned_explained: 0,
        non_aligned: 0,
    };
    let (mut pair_aligned, mut h, mut with_census, mut k_small) = (0, 0, 0, 0);
    for s in summaries {
        match s.outcome {
            TrialOutcome::Completed => agg.completed += 1,
            TrialOutcome::Blowup { .. } => {
                agg.blowups += 1;
                continue;
            }
        }
        if s.aligned {
            agg.aligned += 1;
        } else {
            agg.non_aligned += 1;
            if s.h_flag || interaction_threshold.is_some_and(|th| s.acc_phi < th) {
                agg.non_aligned_explained += 1;
            }
        }
        pair_aligned += usize::from(s.pair_aligned);
        h += usize::from(s.h_flag);
        if let Some(c) = &s.census {
            with_census += 1;
            *agg.cluster_histogram.entry(c.k).or_insert(0) += 1;
            k_small += usize::from(c.k <= 2 * dim);
        }
    }
    agg.aligned_fraction = fraction(agg.aligned, agg.trials);
    agg.aligned_wilson95 = wilson_interval(agg.aligned, agg.trials);
    agg.pair_aligned_fraction = fraction(pair_aligned, agg.trials);
    agg.h_fraction = fraction(h, agg.trials);
    agg.fraction_k_le_2n = fraction(k_small, with_census);
    agg
}

/// Runs `trials` seeded trials on `parallelism` worker threads (0 means the rayon default).
pub fn run_sweep(
    sys: &SystemSpec,
    spec: &SampleSpec,
    params: &TrialParams,
    trials: usize,
    master_seed: u64,
    parallelism: usize,
) -> Result<SweepReport> {
    if trials == 0 {
        return Err(Error::InvalidConfig("a sweep needs at least one trial".into()));
    }
    params.validate()?;
    sys.validate()?;
    spec.validate(sys)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let summaries: Vec<TrialSummary> = pool.install(|| {
        (0..trials as u64)
            .into_par_iter()
            .map(|i| {
                let seed = trial_seed(master_seed, i);
                let s0 = sample_initial(&spec.with_seed(seed), sys)?;
                trial_from_state(i, seed, sys, &s0, params)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let aggregate = aggregate(&summaries, sys.dim(), sys.n_agents, params.eps_a);
    Ok(SweepReport { master_seed, summaries, aggregate })
}

pub fn write_jsonl<W: Write>(summaries: &[TrialSummary], mut w: W) -> std::io::Result<()> {
    for s in summaries {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<TrialSummary>> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::InvalidConfig(format!("line {}: {e}", k + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::InvalidConfig(format!("line {}: {e}", k + 1)))?);
    }
    Ok(out)
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    (slope, (rss / n).sqrt())
}

/// Log-linear and log-log least-squares slopes of `y` over samples with `t` in `window`.
pub fn fit_decay_rate(t: &[f64], y: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    if t.len() != y.len() {
        return Err(Error::InvalidConfig("time and value series differ in length".into()));
    }
    let mut clipped = 0;
    let mut xs = Vec::new();
    let mut logs = Vec::new();
    for (&ti, &yi) in t.iter().zip(y) {
        if ti < window.0 || ti > window.1 {
            continue;
        }
        if !(ti > -1.0 && yi.is_finite()) {
            return Err(Error::InvalidConfig(format!("sample ({ti}, {yi}) cannot be fitted")));
        }
        if yi <= 0.0 {
            clipped += 1;
        }
        xs.push(ti);
        logs.push(yi.max(CLIP_FLOOR).ln());
    }
    if xs.len() < 4 {
        return Err(Error::InvalidConfig(format!("need at least 4 samples in the window, got {}", xs.len())));
    }
    let (exp_rate, exp_residual) = least_squares_slope(&xs, &logs);
    let log_t: Vec<f64> = xs.iter().map(|t| t.ln_1p()).collect();
    let (power_slope, power_residual) = least_squares_slope(&log_t, &logs);
    Ok(DecayFit { exp_rate, power_slope, exp_residual, power_residual, samples: xs.len(), clipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{conserved_means, Force};
    use crate::geometry::{Domain, TWO_PI};
    use crate::model::{KernelSpec, PotentialSpec};

    fn torus_sys(n_agents: usize) -> SystemSpec {
        SystemSpec::new(Domain::torus(2), KernelSpec::SmoothBump { r0: 1.0, amp: 1.0 }, Force::NoForce, n_agents)
    }

    fn ball(seed: u64) -> SampleSpec {
        SampleSpec {
            positions: PositionLaw::UniformTorus,
            velocities: VelocityLaw::UniformBall { radius: 1.0 },
            galilean_center: false,
            seed,
        }
    }

    #[test]
    fn splitmix_reference_values() {
        // first outputs of the reference generator seeded with 0
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(0x9E37_79B9_7F4A_7C15), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let sys = torus_sys(7);
        let a = sample_initial(&ball(11), &sys).unwrap();
        let b = sample_initial(&ball(11), &sys).unwrap();
        assert_eq!(a, b);
        assert!(a.x.iter().all(|&c| (0.0..TWO_PI).contains(&c)));
        assert!((0..7).all(|i| crate::geometry::norm(a.vel(i, 2)) <= 1.0));
        assert_ne!(a, sample_initial(&ball(12), &sys).unwrap());
    }

    #[test]
    fn centered_sample_has_zero_means() {
        let sys = SystemSpec::new(
            Domain::open(3),
            KernelSpec::Constant { amp: 1.0 },
            Force::Confinement { potential: PotentialSpec::QuadraticConfinement },
            9,
        );
        let spec = SampleSpec {
            positions: PositionLaw::UniformBox { half_width: 2.0 },
            velocities: VelocityLaw::Gaussian { sigma: 1.5 },
            galilean_center: true,
            seed: 5,
        };
        let s = sample_initial(&spec, &sys).unwrap();
        let (xbar, vbar) = conserved_means(&s, &sys);
        let size = crate::geometry::norm(&xbar.unwrap()) + crate::geometry::norm(&vbar);
        assert!(size <= 1e-14, "{size}");
    }

    #[test]
    fn centering_on_torus_is_unsupported() {
        let spec = SampleSpec { galilean_center: true, ..ball(1) };
        assert!(matches!(sample_initial(&spec, &torus_sys(3)), Err(Error::Unsupported(_))));
    }

    #[test]
    fn fit_examples() {
        let t: Vec<f64> = (0..200).map(|k| k as f64 * 0.05).collect();
        let y: Vec<f64> = t.iter().map(|t| (-2.0 * t).exp()).collect();
        assert!((fit_decay_rate(&t, &y, (0.0, 10.0)).unwrap().exp_rate + 2.0).abs() < 1e-3);
        let y: Vec<f64> = t.iter().map(|t| (1.0 + t).powf(-0.5)).collect();
        assert!((fit_decay_rate(&t, &y, (0.0, 10.0)).unwrap().power_slope + 0.5).abs() < 1e-3);
        let y = vec![3.0; t.len()];
        let f = fit_decay_rate(&t, &y, (0.0, 10.0)).unwrap();
        assert!(f.exp_rate.abs() < 1e-6 && f.power_slope.abs() < 1e-6);
        assert!(fit_decay_rate(&t[..3], &y[..3], (0.0, 10.0)).is_err());
        let mut z = y.clone();
        z[4] = 0.0;
        assert_eq!(fit_decay_rate(&t, &z, (0.0, 10.0)).unwrap().clipped, 1);
    }

    #[test]
    fn wilson_known_values() {
        let (lo, hi) = wilson_interval(50, 100);
        assert!((lo - 0.403_831).abs() < 1e-5 && (hi - 0.596_169).abs() < 1e-5);
        let (lo, hi) = wilson_interval(0, 10);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.277_532).abs() < 1e-5);
    }

    fn quick_params() -> TrialParams {
        TrialParams::new(IntegrationParams::new(0.05, 20.0, 20))
    }

    #[test]
    fn zero_trials_rejected() {
        let r = run_sweep(&torus_sys(2), &ball(0), &quick_params(), 0, 1, 1);
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn single_trial_sweep_matches_run_trial() {
        let sys = torus_sys(3);
        let rep = run_sweep(&sys, &ball(0), &quick_params(), 1, 99, 1).unwrap();
        let direct = run_trial(&sys, &ball(trial_seed(99, 0)), &quick_params()).unwrap();
        assert_eq!(rep.summaries[0], direct);
    }

    #[test]
    fn sweeps_are_deterministic_and_refoldable() {
        let sys = torus_sys(3);
        let a = run_sweep(&sys, &ball(0), &quick_params(), 6, 7, 1).unwrap();
        let b = run_sweep(&sys, &ball(0), &quick_params(), 6, 7, 3).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        write_jsonl(&a.summaries, &mut buf).unwrap();
        let back = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, a.summaries);
        assert_eq!(aggregate(&back, 2, 3, DEFAULT_EPS_A), a.aggregate);
        assert_eq!(
            serde_json::to_string(&aggregate(&back, 2, 3, DEFAULT_EPS_A)).unwrap(),
            serde_json::to_string(&a.aggregate).unwrap()
        );
    }

    #[test]
    fn close_pair_with_plateau_aligns() {
        let sys = SystemSpec::new(
            Domain::torus(2),
            KernelSpec::Plateau { amp: 5.0, r_flat: 1.0, r0: 1.5 },
            Force::NoForce,
            2,
        );
        let s0 = EnsembleState::new(vec![1.0, 1.0, 1.5, 1.2], vec![0.3, -0.1, -0.2, 0.4]);
        let sum = run_trial_from(&sys, &s0, &quick_params()).unwrap();
        assert!(sum.aligned && sum.pair_aligned);
        assert!(sum.acc_phi > 50.0);
        assert!(!sum.h_flag);
    }

    #[test]
    fn decoupled_oscillators_stay_in_h() {
        let radius = 1.0;
        let sys = SystemSpec::new(
            Domain::open(2),
            KernelSpec::SmoothBump { r0: 1.5, amp: 1.0 },
            Force::Confinement { potential: PotentialSpec::QuadraticConfinement },
            2,
        );
        // antipodal circular orbits of x'' = -x keep distance 2R > r0
        let s0 = EnsembleState::new(vec![radius, 0.0, -radius, 0.0], vec![0.0, radius, 0.0, -radius]);
        let sum = run_trial_from(&sys, &s0, &TrialParams::new(IntegrationParams::new(0.01, 50.0, 100))).unwrap();
        assert!(sum.h_flag && !sum.aligned);
        assert!(sum.acc_phi <= 1e-8);
        assert!((sum.min_distance - 2.0 * radius).abs() < 1e-6);
    }

    #[test]
    fn heavy_tail_always_aligns() {
        let sys = SystemSpec::new(Domain::torus(2), KernelSpec::Constant { amp: 1.0 }, Force::NoForce, 4);
        let rep = run_sweep(&sys, &ball(0), &quick_params(), 5, 3, 1).unwrap();
        assert!(rep.summaries.iter().all(|s| s.aligned));
    }

    #[test]
    fn blowup_is_an_outcome() {
        let sys = SystemSpec::new(
            Domain::open(1),
            KernelSpec::Zero,
            Force::Confinement { potential: PotentialSpec::QuadraticConfinement },
            2,
        );
        let s0 = EnsembleState::new(vec![1.0, -1.0], vec![0.0, 0.0]);
        let sum = run_trial_from(&sys, &s0, &TrialParams::new(IntegrationParams::new(50.0, 1e6, 1))).unwrap();
        assert!(matches!(sum.outcome, TrialOutcome::Blowup { .. }));
        assert!(!sum.aligned && sum.census.is_none());
    }
}
