use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use flocklab::diagnostics::{energy_law_constant, DiagnosticsSample};
use flocklab::dynamics::{EnsembleState, Force};
use flocklab::harness::{fit_decay_rate, run_sweep, write_jsonl, DecayFit, SweepAggregate};
use flocklab::integrator::{integrate, TrajectoryRecord};
use flocklab::model::{validate_pair, PotentialSpec, ValidationReport};
use flocklab::relations::{integer_relation, RelationQuery, RelationResult};
use flocklab::sticky::{run_sticky, ClusterSet, StickyRecord};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{self, RunConfig};
use crate::output::{read_series_csv, write_counts_csv, write_json, write_series_csv};
use crate::{CliError, Command, ConfigArgs};

pub fn run(cmd: Command, stdout: &mut impl Write) -> Result<(), CliError> {
    match cmd {
        Command::Simulate(args) => simulate(&load(&args, &[])?, stdout),
        Command::Sticky(args) => sticky(&load(&args, &[])?, stdout),
        Command::Sweep { common, trials, master_seed, parallelism } => {
            let mut extra = Vec::new();
            if let Some(n) = trials {
                extra.push(("sweep.trials".to_string(), json!(n)));
            }
            if let Some(s) = master_seed {
                extra.push(("sweep.master_seed".to_string(), json!(s)));
            }
            if let Some(p) = parallelism {
                extra.push(("sweep.parallelism".to_string(), json!(p)));
            }
            sweep(&load(&common, &extra)?, stdout)
        }
        Command::Relations { v, tol, bound, scale } => relations(v, tol, bound, scale, stdout),
        Command::Analyze { csv, column, window } => analyze(csv, column, window, stdout),
        Command::Validate { common, radius, grid } => validate(&load(&common, &[])?, radius, grid, stdout),
    }
}

fn load(args: &ConfigArgs, extra: &[(String, Value)]) -> Result<RunConfig, CliError> {
    let mut overrides = Vec::new();
    for raw in &args.set {
        overrides.push(config::parse_override(raw)?);
    }
    let flags: [(&str, Option<Value>); 7] = [
        ("integration.h", args.h.map(|x| json!(x))),
        ("integration.horizon", args.horizon.map(|x| json!(x))),
        ("integration.sample_every", args.sample_every.map(|x| json!(x))),
        ("sampling.seed", args.seed.map(|x| json!(x))),
        ("thresholds.eps_a", args.eps_a.map(|x| json!(x))),
        ("output.dir", args.out_dir.as_ref().map(|x| json!(x))),
        ("output.prefix", args.prefix.as_ref().map(|x| json!(x))),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            overrides.push((key.to_string(), v));
        }
    }
    overrides.extend(extra.iter().cloned());
    config::load(&args.config, &overrides)
}

fn create(path: &PathBuf) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Serialize)]
struct EnergyLaw {
    /// `dE/dt = -c sum_{i,j} phi_ij |v_i - v_j|^2` with the derived `c`.
    derived_constant: f64,
    displayed_constant: f64,
    /// `(E(0) - E(T)) / int sum phi |dv|^2`, when both are defined and nonzero.
    observed_constant: Option<f64>,
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    version: &'static str,
    config: &'a RunConfig,
    outcome: Value,
    samples: usize,
    initial: &'a DiagnosticsSample,
    #[serde(rename = "final")]
    last: &'a DiagnosticsSample,
    final_state: &'a EnsembleState,
    min_pair_distance: f64,
    /// `V2(0) - V2(T)` against `2 acc_diss(T)`; the balance holds without forces only.
    v2_balance: Option<(f64, f64)>,
    energy_law: Option<EnergyLaw>,
    outputs: BTreeMap<&'static str, PathBuf>,
}

fn simulate(cfg: &RunConfig, stdout: &mut impl Write) -> Result<(), CliError> {
    let sys = &cfg.system;
    let s0 = cfg.initial_state()?;
    let (record, outcome): (TrajectoryRecord, Option<f64>) = match integrate(&s0, sys, &cfg.integration) {
        Ok(r) => (r, None),
        Err(f) if f.partial.samples.is_empty() => {
            s0.check(sys).map_err(CliError::config_from)?;
            return Err(CliError::config("integration rejected its input"));
        }
        Err(f) => (f.partial.clone(), Some(f.t)),
    };
    let with_pair = sys.n_agents == 2 && sys.force != Force::NoForce;
    let csv_path = cfg.output.path(".csv");
    let json_path = cfg.output.path(".summary.json");

    let first = &record.samples[0];
    let last = record.final_sample();
    let acc_diss = last.acc_diss - first.acc_diss;
    let energy_law = match (first.energy, last.energy) {
        (Some(e0), Some(e1)) => Some(EnergyLaw {
            derived_constant: energy_law_constant(sys.n_agents),
            displayed_constant: 2.0 * energy_law_constant(sys.n_agents),
            observed_constant: (acc_diss > 0.0).then(|| (e0.total - e1.total) / acc_diss),
        }),
        _ => None,
    };
    let summary = SimulationSummary {
        version: flocklab::VERSION,
        config: cfg,
        outcome: match outcome {
            None => json!({"status": "completed"}),
            Some(t) => json!({"status": "blowup", "t": t}),
        },
        samples: record.samples.len(),
        initial: first,
        last,
        final_state: record.final_state(),
        min_pair_distance: record.min_pair_distance,
        v2_balance: (sys.force == Force::NoForce).then(|| (first.v2 - last.v2, 2.0 * acc_diss)),
        energy_law,
        outputs: BTreeMap::from([("csv", csv_path.clone()), ("summary", json_path.clone())]),
    };
    write_series_csv(create(&csv_path)?, cfg, &record.samples, with_pair)?;
    write_json(create(&json_path)?, &summary)?;
    write_json(stdout, &summary)?;
    match outcome {
        None => Ok(()),
        Some(t) => Err(CliError::Blowup(t)),
    }
}

#[derive(Serialize)]
struct StickyLog<'a> {
    version: &'static str,
    config: &'a RunConfig,
    momentum_initial: Vec<f64>,
    momentum_final: Vec<f64>,
    kinetic_initial: f64,
    kinetic_final: f64,
    single_cluster: bool,
    record: &'a StickyRecord,
}

fn sticky(cfg: &RunConfig, stdout: &mut impl Write) -> Result<(), CliError> {
    let sc = cfg.sticky.as_ref().ok_or_else(|| CliError::config("the sticky command needs a `sticky` block"))?;
    let sys = &cfg.system;
    let s0 = cfg.initial_state()?;
    let set = ClusterSet::pre_glued(&s0, &sys.mass_vector(), sc.r0, sys.domain).map_err(CliError::config_from)?;
    let record = run_sticky(&set, &sc.params()).map_err(CliError::config_from)?;
    let log = StickyLog {
        version: flocklab::VERSION,
        config: cfg,
        momentum_initial: record.initial.momentum(),
        momentum_final: record.final_state.momentum(),
        kinetic_initial: record.initial.kinetic_energy(),
        kinetic_final: record.final_state.kinetic_energy(),
        single_cluster: record.single_cluster(),
        record: &record,
    };
    write_json(create(&cfg.output.path(".events.json"))?, &log)?;
    write_counts_csv(create(&cfg.output.path(".counts.csv"))?, cfg, &record)?;
    write_json(
        stdout,
        &json!({
            "events": record.events.len(),
            "final_clusters": record.final_state.len(),
            "single_cluster": record.single_cluster(),
            "outputs": {
                "events": cfg.output.path(".events.json"),
                "counts": cfg.output.path(".counts.csv"),
            },
        }),
    )
}

#[derive(Serialize)]
struct AggregateReport<'a> {
    version: &'static str,
    config: &'a RunConfig,
    master_seed: u64,
    seed_rule: &'static str,
    aggregate: &'a SweepAggregate,
}

fn sweep(cfg: &RunConfig, stdout: &mut impl Write) -> Result<(), CliError> {
    let spec = cfg.sampling.as_ref().ok_or_else(|| CliError::config("the sweep command needs a `sampling` block"))?;
    let report = run_sweep(
        &cfg.system,
        spec,
        &cfg.trial_params(),
        cfg.sweep.trials,
        cfg.sweep.master_seed,
        cfg.parallelism()?,
    )
    .map_err(CliError::config_from)?;
    let agg = AggregateReport {
        version: flocklab::VERSION,
        config: cfg,
        master_seed: report.master_seed,
        seed_rule: "trial i draws from ChaCha8 seeded with splitmix64(master_seed ^ i)",
        aggregate: &report.aggregate,
    };
    let mut jsonl = create(&cfg.output.path(".trials.jsonl"))?;
    write_jsonl(&report.summaries, &mut jsonl)?;
    jsonl.flush()?;
    write_json(create(&cfg.output.path(".aggregate.json"))?, &agg)?;
    write_json(stdout, &agg)
}

fn relations(v: Vec<f64>, tol: f64, bound: i64, scale: Option<f64>, stdout: &mut impl Write) -> Result<(), CliError> {
    let mut query = RelationQuery::new(v, tol, bound);
    if let Some(s) = scale {
        query = query.with_scale(s);
    }
    let result: RelationResult = integer_relation(&query).map_err(CliError::config_from)?;
    write_json(stdout, &json!({ "version": flocklab::VERSION, "query": query, "result": result }))
}

fn analyze(path: PathBuf, columns: Vec<String>, window: Option<Vec<f64>>, stdout: &mut impl Write) -> Result<(), CliError> {
    let (header, cols) = read_series_csv(&path)?;
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::config(format!("{}: no column `{name}`", path.display())))
    };
    let t = &cols[find("t")?];
    let window = match window {
        Some(w) => (w[0], w[1]),
        None => (1.0, t.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
    };
    let columns = if columns.is_empty() { vec!["V2".to_string(), "align_diam".to_string()] } else { columns };
    let mut fits: BTreeMap<String, DecayFit> = BTreeMap::new();
    for name in columns {
        let y = &cols[find(&name)?];
        fits.insert(name, fit_decay_rate(t, y, window).map_err(CliError::config_from)?);
    }
    write_json(stdout, &json!({ "version": flocklab::VERSION, "csv": path, "window": window, "fits": fits }))
}

#[derive(Serialize)]
struct ValidationOutput<'a> {
    version: &'static str,
    config: &'a RunConfig,
    potential: PotentialSpec,
    report: ValidationReport,
}

fn validate(cfg: &RunConfig, radius: Option<f64>, grid: usize, stdout: &mut impl Write) -> Result<(), CliError> {
    let potential = cfg.system.force.potential().copied().unwrap_or(PotentialSpec::None);
    let radius = radius.or_else(|| cfg.system.kernel.support()).filter(|r| *r > 0.0).unwrap_or(10.0);
    let report = validate_pair(&cfg.system.kernel, &potential, radius, grid).map_err(CliError::config_from)?;
    write_json(stdout, &ValidationOutput { version: flocklab::VERSION, config: cfg, potential, report })
}

