use flocklab::diagnostics::{cluster_census, CensusParams};
use flocklab::harness::{
    aggregate, read_jsonl, run_sweep, sample_initial, write_jsonl, PositionLaw, SampleSpec, TrialParams, VelocityLaw,
};
use flocklab::integrator::{integrate, IntegrationParams};
use flocklab::relations::{kronecker_dimension, RelationResult};
use flocklab::sticky::{replay, run_sticky, ClusterSet, StickyParams, StickyRecord};
use flocklab::{Domain, EnsembleState, Force, KernelSpec, SystemSpec};

fn torus_law(seed: u64) -> SampleSpec {
    SampleSpec {
        positions: PositionLaw::UniformTorus,
        velocities: VelocityLaw::UniformBall { radius: 1.0 },
        galilean_center: false,
        seed,
    }
}

#[test]
fn system_spec_round_trips_through_json() {
    let sys = SystemSpec::new(Domain::open(3), KernelSpec::PowerTail { amp: 2.0, exponent: 0.5 }, Force::NoForce, 7);
    let text = serde_json::to_string(&sys).unwrap();
    assert_eq!(serde_json::from_str::<SystemSpec>(&text).unwrap(), sys);
    let bare = r#"{"domain":{"kind":"torus","n":2},"kernel":{"kind":"constant","amp":1.0},"n_agents":3}"#;
    let parsed: SystemSpec = serde_json::from_str(bare).unwrap();
    assert_eq!(parsed.force, Force::NoForce);
    assert_eq!(parsed.mass_vector(), vec![1.0; 3]);
}

#[test]
fn sweep_jsonl_refolds_to_the_same_aggregate() {
    let sys = SystemSpec::new(Domain::torus(1), KernelSpec::SmoothBump { r0: 1.0, amp: 2.0 }, Force::NoForce, 4);
    let params = TrialParams::new(IntegrationParams::new(0.05, 30.0, 20));
    let report = run_sweep(&sys, &torus_law(0), &params, 12, 2718, 2).unwrap();
    let mut buf = Vec::new();
    write_jsonl(&report.summaries, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text.lines().count(), 12);
    let back = read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(aggregate(&back, 1, 4, params.eps_a), report.aggregate);
    assert_eq!(report.aggregate.cluster_histogram.values().sum::<usize>(), report.aggregate.completed);
}

#[test]
fn aligned_run_has_one_velocity_cluster() {
    let sys = SystemSpec::new(Domain::torus(2), KernelSpec::Constant { amp: 1.0 }, Force::NoForce, 5);
    let s0 = sample_initial(&torus_law(9), &sys).unwrap();
    let rec = integrate(&s0, &sys, &IntegrationParams::new(0.01, 40.0, 500)).unwrap();
    let census = cluster_census(rec.final_state(), &sys, &CensusParams::scaled_to(rec.samples[0].align_diam)).unwrap();
    assert_eq!(census.k, 1);
    assert_eq!(census.groups, vec![vec![0, 1, 2, 3, 4]]);
}

#[test]
fn sticky_log_survives_serialization() {
    let s0 = EnsembleState::new(vec![0.1, 1.3, 2.9, 4.4, 5.6], vec![0.9, -0.2, 0.35, -0.8, 0.05]);
    let set = ClusterSet::pre_glued(&s0, &[1.0, 2.0, 1.0, 0.5, 1.5], 0.3, Domain::torus(1)).unwrap();
    let rec = run_sticky(&set, &StickyParams::new(500.0)).unwrap();
    assert!(rec.single_cluster());
    let back: StickyRecord = serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
    assert_eq!(back, rec);
    assert_eq!(replay(&back.initial, &back.events, back.t_max, 1e-9).unwrap(), rec.final_state);
    let counts: Vec<usize> = rec.cluster_counts.iter().map(|c| c.1).collect();
    assert!(counts.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn kronecker_dimension_of_free_flight_velocities() {
    assert_eq!(kronecker_dimension(&[1.0, 2.0_f64.sqrt()], 1e-9, 100).unwrap(), 2);
    assert_eq!(kronecker_dimension(&[0.5, 1.5], 1e-9, 100).unwrap(), 1);
    let r: RelationResult = serde_json::from_str(r#"{"result":"found","q":[3,-1],"residual":0.0}"#).unwrap();
    assert!(r.is_found());
}
