//! Scalar laws and functionals evaluated on ensemble states.
//!
//! Pair sums run over ordered pairs `(i, j)`, so every unordered pair is
//! counted twice: `V2 = sum_{i,j} |v_i - v_j|^2`.

use serde::{Deserialize, Serialize};

use crate::dsu::DisjointSets;
use crate::dynamics::{EnsembleState, Force, SystemSpec};
use crate::error::{Error, Result};
use crate::geometry::{displacement_into, distance_sq, dot, norm};
use crate::model::{add_potential_grad, RadialProfile};
use crate::relations::{integer_relation, RelationQuery, RelationResult};

fn pair_velocity_stats(s: &EnsembleState, sys: &SystemSpec) -> (f64, f64, f64) {
    let n = sys.dim();
    let (mut v2, mut v1, mut diam_sq) = (0.0, 0.0, 0.0f64);
    for i in 0..sys.n_agents {
        for j in (i + 1)..sys.n_agents {
            let d = distance_sq(s.vel(i, n), s.vel(j, n), &crate::geometry::Domain::open(n));
            v2 += 2.0 * d;
            v1 += 2.0 * d.sqrt();
            diam_sq = diam_sq.max(d);
        }
    }
    (v2, v1, diam_sq.sqrt())
}

/// `V2 = sum_{i,j} |v_i - v_j|^2`, the squared distance of `v` to the diagonal.
pub fn quadratic_variation(s: &EnsembleState, sys: &SystemSpec) -> f64 {
    pair_velocity_stats(s, sys).0
}

/// `V1 = sum_{i,j} |v_i - v_j|`.
pub fn one_variation(s: &EnsembleState, sys: &SystemSpec) -> f64 {
    pair_velocity_stats(s, sys).1
}

/// `max_{i,j} |v_i - v_j|`.
pub fn align_diameter(s: &EnsembleState, sys: &SystemSpec) -> f64 {
    pair_velocity_stats(s, sys).2
}

/// `max_{i,j} dist(x_i, x_j)` in the system's geometry.
pub fn flock_diameter(s: &EnsembleState, sys: &SystemSpec) -> f64 {
    let n = sys.dim();
    let mut best = 0.0f64;
    for i in 0..sys.n_agents {
        for j in (i + 1)..sys.n_agents {
            best = best.max(distance_sq(s.pos(i, n), s.pos(j, n), &sys.domain));
        }
    }
    best.sqrt()
}

/// Smallest pairwise geodesic distance.
pub fn min_pair_distance(s: &EnsembleState, sys: &SystemSpec) -> f64 {
    let n = sys.dim();
    let mut best = f64::INFINITY;
    for i in 0..sys.n_agents {
        for j in (i + 1)..sys.n_agents {
            best = best.min(distance_sq(s.pos(i, n), s.pos(j, n), &sys.domain));
        }
    }
    best.sqrt()
}

struct KernelSums {
    /// `sum_{i,j} phi_ij |v_i - v_j|^2`
    diss: f64,
    /// `(1/N) sum_{i,j} phi_ij |v_i - v_j|`
    i1: f64,
}

fn kernel_sums(s: &EnsembleState, sys: &SystemSpec) -> KernelSums {
    let n = sys.dim();
    let mut scratch = vec![0.0; n];
    let (mut diss, mut i1) = (0.0, 0.0);
    for i in 0..sys.n_agents {
        for j in (i + 1)..sys.n_agents {
            displacement_into(s.pos(i, n), s.pos(j, n), &sys.domain, &mut scratch);
            let phi = sys.kernel.value(norm(&scratch));
            if phi == 0.0 {
                continue;
            }
            let vv: f64 = s.vel(i, n).iter().zip(s.vel(j, n)).map(|(a, b)| (a - b) * (a - b)).sum();
            diss += 2.0 * phi * vv;
            i1 += 2.0 * phi * vv.sqrt();
        }
    }
    KernelSums { diss, i1: i1 / sys.n_agents as f64 }
}

/// `I1 = (1/N) sum_{i,j} phi_ij |v_i - v_j|`.
pub fn i1(s: &EnsembleState, sys: &SystemSpec) -> f64 {
    kernel_sums(s, sys).i1
}

/// `dV2/dt = -2 sum_{i,j} phi_ij |v_i - v_j|^2`.
pub fn dissipation_rate(s: &EnsembleState, sys: &SystemSpec) -> f64 {
    -2.0 * kernel_sums(s, sys).diss
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub total: f64,
    pub kinetic: f64,
    pub potential: f64,
}

/// Kinetic `K = (1/2N) sum |v_i|^2` plus the mode's potential energy.
///
/// Confinement: `P = (1/N) sum_i U(x_i)`.
/// Pairwise: `P = (1/(2N^2)) sum_{i,j} U(x_ij)`, the normalization under
/// which `E` obeys the dissipation law exactly.
pub fn total_energy(s: &EnsembleState, sys: &SystemSpec) -> Result<Energy> {
    if sys.domain.is_torus() {
        return Err(Error::Unsupported("energy is defined on open space only".into()));
    }
    let n = sys.dim();
    let big_n = sys.n_agents as f64;
    let kinetic = s.v.iter().map(|c| c * c).sum::<f64>() / (2.0 * big_n);
    let potential = match &sys.force {
        Force::NoForce => return Err(Error::Unsupported("energy needs a potential force".into())),
        Force::Confinement { potential } => {
            s.x.chunks_exact(n).map(|xi| potential.value(norm(xi))).sum::<f64>() / big_n
        }
        Force::Pairwise { potential } => {
            let mut scratch = vec![0.0; n];
            let mut total = 0.0;
            for i in 0..sys.n_agents {
                for j in (i + 1)..sys.n_agents {
                    displacement_into(s.pos(i, n), s.pos(j, n), &sys.domain, &mut scratch);
                    total += 2.0 * potential.value(norm(&scratch));
                }
            }
            total / (2.0 * big_n * big_n)
        }
    };
    Ok(Energy { total: kinetic + potential, kinetic, potential })
}

/// `dE/dt = -(1/(2N^2)) sum_{i,j} phi_ij |v_i - v_j|^2` along the flow.
pub fn energy_dissipation_rate(s: &EnsembleState, sys: &SystemSpec) -> f64 {
    let big_n = sys.n_agents as f64;
    -kernel_sums(s, sys).diss / (2.0 * big_n * big_n)
}

/// Constant in front of `sum phi_ij |v_i - v_j|^2` in `dE/dt`, as derived from the equations of motion.
pub fn energy_law_constant(n_agents: usize) -> f64 {
    1.0 / (2.0 * (n_agents * n_agents) as f64)
}

/// Two-agent Lyapunov functionals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFunctionals {
    /// Communication-weighted cross term.
    pub chi: f64,
    /// `pair_energy + eps * chi`
    pub modified_energy: f64,
    pub pair_energy: f64,
}

/// Confinement: `|v12|^2 + |x12|^2` and `chi = phi12 x12.v12`.
/// Pairwise: `|v12|^2 + 2 U(x12)` and `chi = phi12 grad U(x12).v12`.
pub fn pair_functionals(s: &EnsembleState, sys: &SystemSpec, eps: f64) -> Result<PairFunctionals> {
    if sys.n_agents != 2 {
        return Err(Error::Unsupported(format!("pair functionals need N = 2, got {}", sys.n_agents)));
    }
    let n = sys.dim();
    let mut x12 = vec![0.0; n];
    displacement_into(s.pos(0, n), s.pos(1, n), &sys.domain, &mut x12);
    let v12: Vec<f64> = s.vel(0, n).iter().zip(s.vel(1, n)).map(|(a, b)| a - b).collect();
    let r = norm(&x12);
    let phi = sys.kernel.value(r);
    let vv = dot(&v12, &v12);
    let (pair_energy, chi) = match &sys.force {
        Force::NoForce => return Err(Error::Unsupported("pair functionals need a potential force".into())),
        Force::Confinement { .. } => (vv + r * r, phi * dot(&x12, &v12)),
        Force::Pairwise { potential } => {
            let mut grad = vec![0.0; n];
            add_potential_grad(potential, &x12, 1.0, &mut grad);
            (vv + 2.0 * potential.value(r), phi * dot(&grad, &v12))
        }
    };
    Ok(PairFunctionals { chi, modified_energy: pair_energy + eps * chi, pair_energy })
}

/// One row of the recorded time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSample {
    pub t: f64,
    pub v2: f64,
    pub v1: f64,
    pub i1: f64,
    pub diss_rate: f64,
    pub energy: Option<Energy>,
    pub align_diam: f64,
    pub flock_diam: f64,
    pub acc_phi: f64,
    pub acc_diss: f64,
    pub acc_i1: f64,
    pub pair: Option<PairFunctionals>,
}

impl DiagnosticsSample {
    pub fn compute(s: &EnsembleState, sys: &SystemSpec, pair_eps: f64) -> Self {
        let (v2, v1, align_diam) = pair_velocity_stats(s, sys);
        let sums = kernel_sums(s, sys);
        let energy = total_energy(s, sys).ok();
        let pair = if sys.n_agents == 2 { pair_functionals(s, sys, pair_eps).ok() } else { None };
        DiagnosticsSample {
            t: s.t,
            v2,
            v1,
            i1: sums.i1,
            diss_rate: -2.0 * sums.diss,
            energy,
            align_diam,
            flock_diam: flock_diameter(s, sys),
            acc_phi: s.acc_phi,
            acc_diss: s.acc_diss,
            acc_i1: s.acc_i1,
            pair,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensusParams {
    /// Velocity tolerance for grouping.
    pub eps_v: f64,
    pub relation_tol: f64,
    pub relation_bound: i64,
}

impl Default for CensusParams {
    fn default() -> Self {
        CensusParams { eps_v: 1e-8, relation_tol: 1e-9, relation_bound: 100 }
    }
}

impl CensusParams {
    /// Grouping tolerance `1e-3 * align_diam(0)`, floored at `1e-8`.
    pub fn scaled_to(initial_align_diam: f64) -> Self {
        CensusParams { eps_v: (1e-3 * initial_align_diam).max(1e-8), ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationCertificate {
    pub groups: (usize, usize),
    pub q: Vec<i64>,
    pub residual: f64,
}

/// Velocity clusters of a state with their separation and rational-dependence evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCensus {
    pub groups: Vec<Vec<usize>>,
    pub velocities: Vec<Vec<f64>>,
    /// All members of distinct groups at distance `>= r0`.
    pub separation_ok: bool,
    pub k: usize,
    pub relation_certificates: Vec<RelationCertificate>,
    pub eps_v: f64,
}

pub fn cluster_census(s: &EnsembleState, sys: &SystemSpec, params: &CensusParams) -> Result<ClusterCensus> {
    let n = sys.dim();
    let big_n = sys.n_agents;
    let mut sets = DisjointSets::new(big_n);
    let eps_sq = params.eps_v * params.eps_v;
    let flat = crate::geometry::Domain::open(n);
    for i in 0..big_n {
        for j in (i + 1)..big_n {
            if distance_sq(s.vel(i, n), s.vel(j, n), &flat) <= eps_sq {
                sets.union(i, j);
            }
        }
    }
    let groups = sets.groups();
    let velocities: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let mut mean = vec![0.0; n];
            for &i in g {
                for (m, c) in mean.iter_mut().zip(s.vel(i, n)) {
                    *m += c;
                }
            }
            mean.iter_mut().for_each(|m| *m /= g.len() as f64);
            mean
        })
        .collect();

    let r0 = sys.kernel.support();
    let mut separation_ok = true;
    'outer: for (a, ga) in groups.iter().enumerate() {
        for gb in &groups[a + 1..] {
            for &i in ga {
                for &j in gb {
                    let close = match r0 {
                        Some(r0) => distance_sq(s.pos(i, n), s.pos(j, n), &sys.domain) < r0 * r0,
                        None => true,
                    };
                    if close {
                        separation_ok = false;
                        break 'outer;
                    }
                }
            }
        }
    }

    let mut relation_certificates = Vec::new();
    for a in 0..groups.len() {
        for b in (a + 1)..groups.len() {
            let diff: Vec<f64> = velocities[a].iter().zip(&velocities[b]).map(|(p, q)| p - q).collect();
            let query = RelationQuery::new(diff, params.relation_tol, params.relation_bound);
            if let RelationResult::Found { q, residual } = integer_relation(&query)? {
                relation_certificates.push(RelationCertificate { groups: (a, b), q, residual });
            }
        }
    }
    Ok(ClusterCensus {
        k: groups.len(),
        groups,
        velocities,
        separation_ok,
        relation_certificates,
        eps_v: params.eps_v,
    })
}
