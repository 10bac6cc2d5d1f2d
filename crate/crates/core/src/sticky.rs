//! Event-driven sticky particles on the torus.
//!
//! Between events every cluster flies freely, so collisions are roots of
//! `|dx + s dv + P m|^2 = r0^2` over image shifts `m`. Clusters that touch are
//! glued into a rigid body moving with the mass-weighted mean velocity.

use serde::{Deserialize, Serialize};

use crate::dsu::DisjointSets;
use crate::dynamics::EnsembleState;
use crate::error::{invalid_state, Result};
use crate::geometry::{displacement_into, distance_sq, min_image_coord, norm, wrap_coord, Domain};

pub const DEFAULT_TAU_EVENT: f64 = 1e-9;
pub const DEFAULT_TAU_GEOM: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Sorted agent indices.
    pub members: Vec<usize>,
    pub mass: f64,
    /// Position of the first member at the set's current time.
    pub anchor: Vec<f64>,
    /// Rigid offset of each member from the anchor.
    pub offsets: Vec<Vec<f64>>,
    pub velocity: Vec<f64>,
}

impl Cluster {
    /// Cluster ids are the smallest member index.
    pub fn id(&self) -> usize {
        self.members[0]
    }

    fn member_position(&self, k: usize, dt: f64, period: f64) -> Vec<f64> {
        self.anchor
            .iter()
            .zip(&self.offsets[k])
            .zip(&self.velocity)
            .map(|((a, o), v)| wrap_coord(a + o + v * dt, period))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    /// Ordered by cluster id.
    pub clusters: Vec<Cluster>,
    pub t: f64,
    pub r0: f64,
    pub domain: Domain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StickyParams {
    pub t_max: f64,
    #[serde(default = "default_tau_event")]
    pub tau_event: f64,
    #[serde(default = "default_tau_geom")]
    pub tau_geom: f64,
}

fn default_tau_event() -> f64 {
    DEFAULT_TAU_EVENT
}

fn default_tau_geom() -> f64 {
    DEFAULT_TAU_GEOM
}

impl StickyParams {
    pub fn new(t_max: f64) -> Self {
        StickyParams { t_max, tau_event: DEFAULT_TAU_EVENT, tau_geom: DEFAULT_TAU_GEOM }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StickyEvent {
    pub time: f64,
    /// Ids of the clusters glued together, ascending.
    pub clusters: Vec<usize>,
    /// Agent pairs found at distance `r0`.
    pub witnesses: Vec<(usize, usize)>,
}

fn check_domain(domain: &Domain, r0: f64) -> Result<f64> {
    let Some(period) = domain.period() else {
        return Err(crate::error::Error::Unsupported("sticky particles live on the torus".into()));
    };
    domain.validate()?;
    if !(r0 > 0.0 && r0 < 0.5 * period) {
        return Err(invalid_state(format!("gluing radius must lie in (0, period/2), got {r0}")));
    }
    Ok(period)
}

fn weighted_velocity<'a>(parts: impl Iterator<Item = (f64, &'a [f64])>, n: usize) -> (f64, Vec<f64>) {
    let mut mass = 0.0;
    let mut momentum = vec![0.0; n];
    for (m, v) in parts {
        mass += m;
        for (p, c) in momentum.iter_mut().zip(v) {
            *p += m * c;
        }
    }
    momentum.iter_mut().for_each(|p| *p /= mass);
    (mass, momentum)
}

fn build_cluster(members: Vec<usize>, positions: &[Vec<f64>], mass: f64, velocity: Vec<f64>, period: f64) -> Cluster {
    let anchor = positions[members[0]].clone();
    let offsets = members
        .iter()
        .map(|&i| positions[i].iter().zip(&anchor).map(|(p, a)| min_image_coord(p - a, period)).collect())
        .collect();
    Cluster { members, mass, anchor, offsets, velocity }
}

impl ClusterSet {
    /// One cluster per agent; fails if two agents start closer than `r0 - tau_geom`.
    pub fn singletons(state: &EnsembleState, masses: &[f64], r0: f64, domain: Domain, tau_geom: f64) -> Result<Self> {
        let set = Self::glued(state, masses, r0, domain, None)?;
        set.check_separation(tau_geom)?;
        Ok(set)
    }

    /// Glues every group of agents connected by distances below `r0` into one
    /// cluster with the mass-weighted mean velocity.
    pub fn pre_glued(state: &EnsembleState, masses: &[f64], r0: f64, domain: Domain) -> Result<Self> {
        Self::glued(state, masses, r0, domain, Some(r0))
    }

    fn glued(state: &EnsembleState, masses: &[f64], r0: f64, domain: Domain, glue: Option<f64>) -> Result<Self> {
        let period = check_domain(&domain, r0)?;
        let n = domain.dim();
        let big_n = masses.len();
        if state.x.len() != big_n * n || state.v.len() != big_n * n {
            return Err(invalid_state("state shape does not match masses and dimension"));
        }
        if !masses.iter().all(|&m| m > 0.0 && m.is_finite()) {
            return Err(invalid_state("masses must be positive"));
        }
        let positions: Vec<Vec<f64>> =
            (0..big_n).map(|i| state.pos(i, n).iter().map(|&c| wrap_coord(c, period)).collect()).collect();
        let mut sets = DisjointSets::new(big_n);
        if let Some(radius) = glue {
            for i in 0..big_n {
                for j in (i + 1)..big_n {
                    if distance_sq(&positions[i], &positions[j], &domain) < radius * radius {
                        sets.union(i, j);
                    }
                }
            }
        }
        let clusters = sets
            .groups()
            .into_iter()
            .map(|members| {
                let (mass, velocity) = weighted_velocity(members.iter().map(|&i| (masses[i], state.vel(i, n))), n);
                build_cluster(members, &positions, mass, velocity, period)
            })
            .collect();
        Ok(ClusterSet { clusters, t: state.t, r0, domain })
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.clusters.iter().map(|c| c.members.len()).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.clusters.iter().map(|c| c.mass).sum()
    }

    pub fn momentum(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.domain.dim()];
        for c in &self.clusters {
            for (a, v) in p.iter_mut().zip(&c.velocity) {
                *a += c.mass * v;
            }
        }
        p
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.clusters.iter().map(|c| 0.5 * c.mass * c.velocity.iter().map(|v| v * v).sum::<f64>()).sum()
    }

    fn period(&self) -> f64 {
        self.domain.period().expect("cluster sets live on the torus")
    }

    /// Agent positions after free flight for `dt`, indexed by agent.
    pub fn positions_after(&self, dt: f64) -> Vec<Vec<f64>> {
        let period = self.period();
        let mut out = vec![Vec::new(); self.n_agents()];
        for c in &self.clusters {
            for (k, &i) in c.members.iter().enumerate() {
                out[i] = c.member_position(k, dt, period);
            }
        }
        out
    }

    /// Agent velocities, indexed by agent.
    pub fn velocities(&self) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.n_agents()];
        for c in &self.clusters {
            for &i in &c.members {
                out[i] = c.velocity.clone();
            }
        }
        out
    }

    /// Smallest distance between members of different clusters after flight for `dt`.
    pub fn min_intercluster_distance_after(&self, dt: f64) -> f64 {
        let pos = self.positions_after(dt);
        let mut best = f64::INFINITY;
        for (a, ca) in self.clusters.iter().enumerate() {
            for cb in &self.clusters[a + 1..] {
                for &i in &ca.members {
                    for &j in &cb.members {
                        best = best.min(distance_sq(&pos[i], &pos[j], &self.domain));
                    }
                }
            }
        }
        best.sqrt()
    }

    fn check_separation(&self, tau_geom: f64) -> Result<()> {
        let d = self.min_intercluster_distance_after(0.0);
        if d < self.r0 - tau_geom {
            return Err(invalid_state(format!(
                "clusters overlap: distance {d} below gluing radius {}",
                self.r0
            )));
        }
        Ok(())
    }

    /// Free flight of every cluster up to time `t`.
    pub fn advance_to(&mut self, t: f64) {
        let dt = t - self.t;
        let period = self.period();
        for c in &mut self.clusters {
            for (a, v) in c.anchor.iter_mut().zip(&c.velocity) {
                *a = wrap_coord(*a + v * dt, period);
            }
        }
        self.t = t;
    }

    /// Equivalent unit-time ensemble state (positions and velocities per agent).
    pub fn to_state(&self) -> EnsembleState {
        let mut s = EnsembleState::new(
            self.positions_after(0.0).concat(),
            self.velocities().concat(),
        );
        s.t = self.t;
        s
    }
}

/// Earliest time in `[0, horizon]` at which `|dx + s dv|` reaches `r0` from
/// outside, over all periodic images.
fn earliest_contact(dx: &[f64], dv: &[f64], r0: f64, period: f64, horizon: f64, contact_tol: f64) -> Option<f64> {
    let speed = norm(dv);
    if speed == 0.0 || horizon < 0.0 {
        return None;
    }
    let n = dx.len();
    let a = speed * speed;
    let window = (period / speed).min(horizon).max(f64::MIN_POSITIVE);
    let mut d0 = vec![0.0; n];
    let mut shifted = vec![0.0; n];
    let mut start = 0.0;
    loop {
        let end = (start + window).min(horizon);
        for k in 0..n {
            d0[k] = min_image_coord(dx[k] + start * dv[k], period);
        }
        let reach = norm(&d0) + speed * (end - start) + r0;
        let span = (reach / period).ceil() as i64;
        let mut best: Option<f64> = None;
        let mut m = vec![-span; n];
        'images: loop {
            let mut shift_sq = 0.0;
            for k in 0..n {
                shifted[k] = d0[k] + period * m[k] as f64;
                shift_sq += (period * m[k] as f64).powi(2);
            }
            if shift_sq.sqrt() <= reach + period {
                let b = 2.0 * shifted.iter().zip(dv).map(|(p, q)| p * q).sum::<f64>();
                let c = shifted.iter().map(|p| p * p).sum::<f64>() - r0 * r0;
                let root = if c <= contact_tol {
                    // touching now: only an approaching pair collides
                    (b < 0.0).then_some(0.0)
                } else {
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 && b < 0.0 {
                        // numerically stable smaller root of a u^2 + b u + c
                        let qq = -0.5 * (b - disc.sqrt());
                        Some(c / qq)
                    } else {
                        None
                    }
                };
                if let Some(u) = root {
                    if u <= end - start && best.is_none_or(|bst| u < bst) {
                        best = Some(u);
                    }
                }
            }
            for k in 0..n {
                m[k] += 1;
                if m[k] <= span {
                    continue 'images;
                }
                m[k] = -span;
            }
            break;
        }
        if let Some(u) = best {
            return Some(start + u);
        }
        if end >= horizon {
            return None;
        }
        start = end;
    }
}

/// Earliest gluing event in `(t, t_max]`, with contacts within `tau_event` of it coalesced.
pub fn next_event(c: &ClusterSet, t_max: f64, params: &StickyParams) -> Result<Option<StickyEvent>> {
    let period = check_domain(&c.domain, c.r0)?;
    c.check_separation(params.tau_geom)?;
    let horizon = t_max - c.t;
    if horizon < 0.0 || c.len() < 2 {
        return Ok(None);
    }
    let n = c.domain.dim();
    let pos = c.positions_after(0.0);
    let contact_tol = 2.0 * c.r0 * params.tau_geom;
    let mut dx = vec![0.0; n];
    // (time, cluster a, cluster b, agent i, agent j)
    let mut contacts: Vec<(f64, usize, usize, usize, usize)> = Vec::new();
    for (a, ca) in c.clusters.iter().enumerate() {
        for (b, cb) in c.clusters.iter().enumerate().skip(a + 1) {
            let dv: Vec<f64> = ca.velocity.iter().zip(&cb.velocity).map(|(p, q)| p - q).collect();
            let mut pair_best: Option<(f64, usize, usize)> = None;
            for &i in &ca.members {
                for &j in &cb.members {
                    displacement_into(&pos[i], &pos[j], &c.domain, &mut dx);
                    let limit = pair_best.map_or(horizon, |p| p.0 + params.tau_event);
                    if let Some(s) = earliest_contact(&dx, &dv, c.r0, period, limit, contact_tol) {
                        if pair_best.is_none_or(|p| s < p.0) {
                            pair_best = Some((s, i, j));
                        }
                    }
                }
            }
            if let Some((s, i, j)) = pair_best {
                contacts.push((s, a, b, i, j));
            }
        }
    }
    let Some(first) = contacts.iter().map(|x| x.0).min_by(f64::total_cmp) else {
        return Ok(None);
    };
    let mut sets = DisjointSets::new(c.len());
    let simultaneous: Vec<_> = contacts.iter().filter(|x| x.0 <= first + params.tau_event).collect();
    for x in &simultaneous {
        sets.union(x.1, x.2);
    }
    let lead = simultaneous.iter().find(|x| x.0 == first).expect("minimum is attained");
    let root = sets.find(lead.1);
    let mut members: Vec<usize> = (0..c.len()).filter(|&k| sets.find(k) == root).collect();
    members.sort_unstable();
    let witnesses = simultaneous.iter().filter(|x| sets.find(x.1) == root).map(|x| (x.3, x.4)).collect();
    Ok(Some(StickyEvent {
        time: c.t + first,
        clusters: members.iter().map(|&k| c.clusters[k].id()).collect(),
        witnesses,
    }))
}

/// Glues the clusters named by `e`; the set must already be at the event time.
pub fn merge(c: &ClusterSet, e: &StickyEvent, tau_event: f64) -> Result<ClusterSet> {
    if (c.t - e.time).abs() > tau_event.max(1e-12 * e.time.abs()) {
        return Err(invalid_state(format!("event at t = {} applied to clusters at t = {}", e.time, c.t)));
    }
    if e.clusters.len() < 2 {
        return Err(invalid_state("an event needs at least two clusters"));
    }
    let period = c.period();
    let n = c.domain.dim();
    let (parts, rest): (Vec<&Cluster>, Vec<&Cluster>) = c.clusters.iter().partition(|k| e.clusters.contains(&k.id()));
    if parts.len() != e.clusters.len() {
        return Err(invalid_state("event names clusters that do not exist"));
    }
    let (mass, velocity) = weighted_velocity(parts.iter().map(|k| (k.mass, k.velocity.as_slice())), n);
    let positions = c.positions_after(0.0);
    let mut members: Vec<usize> = parts.iter().flat_map(|k| k.members.iter().copied()).collect();
    members.sort_unstable();
    let merged = build_cluster(members, &positions, mass, velocity, period);
    let mut clusters: Vec<Cluster> = rest.into_iter().cloned().collect();
    let at = clusters.partition_point(|k| k.id() < merged.id());
    clusters.insert(at, merged);
    Ok(ClusterSet { clusters, t: c.t, r0: c.r0, domain: c.domain })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StickyRecord {
    pub initial: ClusterSet,
    pub events: Vec<StickyEvent>,
    /// Cluster set at `t_max`.
    pub final_state: ClusterSet,
    /// `(t, cluster count)`: the initial count, then one row per event.
    pub cluster_counts: Vec<(f64, usize)>,
    pub t_max: f64,
}

impl StickyRecord {
    pub fn single_cluster(&self) -> bool {
        self.final_state.len() == 1
    }
}

/// Alternates exact free flight and gluing until one cluster is left or `t_max` is reached.
pub fn run_sticky(initial: &ClusterSet, params: &StickyParams) -> Result<StickyRecord> {
    let mut c = initial.clone();
    let mut events = Vec::new();
    let mut cluster_counts = vec![(c.t, c.len())];
    while c.len() > 1 {
        let Some(e) = next_event(&c, params.t_max, params)? else {
            break;
        };
        c.advance_to(e.time);
        c = merge(&c, &e, params.tau_event)?;
        cluster_counts.push((e.time, c.len()));
        events.push(e);
    }
    c.advance_to(params.t_max.max(c.t));
    Ok(StickyRecord { initial: initial.clone(), events, final_state: c, cluster_counts, t_max: params.t_max })
}

/// Re-applies a logged event sequence to the initial cluster set.
pub fn replay(initial: &ClusterSet, events: &[StickyEvent], t_max: f64, tau_event: f64) -> Result<ClusterSet> {
    let mut c = initial.clone();
    for e in events {
        c.advance_to(e.time);
        c = merge(&c, e, tau_event)?;
    }
    c.advance_to(t_max.max(c.t));
    Ok(c)
}
