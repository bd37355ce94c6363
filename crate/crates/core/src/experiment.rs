//! Command logic behind the CLI. Every command returns its files as
//! in-memory [`Artifact`]s so callers decide where they land.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{gen_attack, run_attack, AttackConfig, DefenseReport};
use crate::config::{ExperimentConfig, Format, Knob};
use crate::engine::{event_log_text, run_simulation, EngineConfig, MetricsReport, SimOutput};
use crate::error::{Error, Result};
use crate::ledger::LedgerState;
use crate::report::{compare_csv, defense_csv, sweep_csv, to_json, SweepRow};
use crate::sched::Scheme;
use crate::workload::{contention_index, generate_workload, TxStream, WorkloadConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    fn new(name: impl Into<String>, contents: String) -> Self {
        Artifact {
            name: name.into(),
            contents,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub artifacts: Vec<Artifact>,
    /// Human-readable text for stdout.
    pub summary: String,
}

pub fn hex(v: u64) -> String {
    format!("{v:016x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub scheme: String,
    pub mix: String,
    pub knob_value: Option<f64>,
    pub stream_checksum: String,
    pub chain_digest: String,
    pub chain_height: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub runs: Vec<RunMeta>,
}

/// One JSON report file from `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub stream_checksum: String,
    pub chain_digest: String,
    pub contention_index: f64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackFile {
    pub arm: String,
    pub honest_checksum: String,
    pub stream_checksum: String,
    pub chain_digest: String,
    pub metrics: MetricsReport,
    pub defense: DefenseReport,
}

#[derive(Debug, Clone)]
pub struct SchemeRun {
    pub scheme: Scheme,
    pub mix: String,
    pub knob_value: Option<f64>,
    pub stream_checksum: u64,
    pub contention_index: f64,
    pub output: SimOutput,
}

impl SchemeRun {
    fn meta(&self) -> RunMeta {
        RunMeta {
            scheme: self.scheme.to_string(),
            mix: self.mix.clone(),
            knob_value: self.knob_value,
            stream_checksum: hex(self.stream_checksum),
            chain_digest: hex(chain_digest(&self.output)),
            chain_height: self.output.chain.last().map_or(0, |b| b.height),
        }
    }

    fn stem(&self) -> String {
        format!("{}_{}", self.scheme, self.mix)
    }
}

pub fn chain_digest(out: &SimOutput) -> u64 {
    out.chain.last().map_or(0, |b| b.digest)
}

struct Prepared {
    mix: String,
    knob_value: Option<f64>,
    stream: TxStream,
    initial: LedgerState,
    contention: f64,
}

fn prepare(workload: &WorkloadConfig, knob_value: Option<f64>) -> Result<Prepared> {
    let stream = generate_workload(workload)?;
    Ok(Prepared {
        mix: workload.mix.label(),
        knob_value,
        contention: contention_or_zero(&stream),
        initial: workload.initial_state(),
        stream,
    })
}

fn prepare_attack(attack: &AttackConfig, knob_value: Option<f64>) -> Result<Prepared> {
    let stream = gen_attack(attack)?;
    Ok(Prepared {
        mix: attack.honest.mix.label(),
        knob_value,
        contention: contention_or_zero(&stream),
        initial: attack.initial_state(),
        stream,
    })
}

fn contention_or_zero(stream: &TxStream) -> f64 {
    contention_index(&stream.txs).unwrap_or(0.0)
}

/// Runs every scheme on every prepared stream, in parallel, returning
/// results in (stream, scheme) order.
fn run_grid(prepared: &[Prepared], schemes: &[Scheme], engine: &EngineConfig) -> Result<Vec<SchemeRun>> {
    let jobs: Vec<(&Prepared, Scheme)> = prepared
        .iter()
        .flat_map(|p| schemes.iter().map(move |s| (p, *s)))
        .collect();
    jobs.into_par_iter()
        .map(|(p, scheme)| {
            let output = run_simulation(&p.stream, scheme, &p.initial, engine, &p.mix)?;
            Ok(SchemeRun {
                scheme,
                mix: p.mix.clone(),
                knob_value: p.knob_value,
                stream_checksum: p.stream.checksum(),
                contention_index: p.contention,
                output,
            })
        })
        .collect()
}

/// One run per (mix, scheme); all schemes of a mix share one stream.
pub fn run_matrix(cfg: &ExperimentConfig) -> Result<Vec<SchemeRun>> {
    cfg.validate()?;
    let prepared = cfg
        .mixes
        .iter()
        .map(|mix| {
            prepare(
                &WorkloadConfig {
                    mix: *mix,
                    ..cfg.workload.clone()
                },
                None,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    run_grid(&prepared, &cfg.schemes, &cfg.engine)
}

fn manifest(command: &str, cfg: &ExperimentConfig, runs: &[SchemeRun]) -> Result<Artifact> {
    let m = Manifest {
        command: command.to_string(),
        seed: cfg.workload.seed,
        runs: runs.iter().map(SchemeRun::meta).collect(),
    };
    Ok(Artifact::new("manifest.json", to_json(&m)?))
}

fn event_logs(cfg: &ExperimentConfig, runs: &[SchemeRun]) -> Vec<Artifact> {
    if !cfg.engine.event_log {
        return Vec::new();
    }
    runs.iter()
        .map(|r| {
            let name = match r.knob_value {
                Some(v) => format!("events_{}_{}.csv", crate::report::fixed(v, 4), r.stem()),
                None => format!("events_{}.csv", r.stem()),
            };
            Artifact::new(name, event_log_text(&r.output.events))
        })
        .collect()
}

fn reports(runs: &[SchemeRun]) -> Vec<MetricsReport> {
    runs.iter().map(|r| r.output.report.clone()).collect()
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let runs = run_matrix(cfg)?;
    let mut artifacts = Vec::new();
    match cfg.output.format {
        Format::Json => {
            for r in &runs {
                let file = RunFile {
                    stream_checksum: hex(r.stream_checksum),
                    chain_digest: hex(chain_digest(&r.output)),
                    contention_index: r.contention_index,
                    report: r.output.report.clone(),
                };
                artifacts.push(Artifact::new(format!("report_{}.json", r.stem()), to_json(&file)?));
            }
        }
        Format::Csv => artifacts.push(Artifact::new("report.csv", compare_csv(&reports(&runs)))),
    }
    artifacts.push(manifest("run", cfg, &runs)?);
    artifacts.extend(event_logs(cfg, &runs));
    Ok(CommandOutput {
        artifacts,
        summary: compare_csv(&reports(&runs)),
    })
}

pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    if cfg.schemes.len() < 2 {
        return Err(Error::config("experiment.schemes", "compare needs at least two schemes"));
    }
    let runs = run_matrix(cfg)?;
    let table = compare_csv(&reports(&runs));
    let mut artifacts = vec![Artifact::new("compare.csv", table.clone())];
    if cfg.output.format == Format::Json {
        artifacts.push(Artifact::new("compare.json", to_json(&reports(&runs))?));
    }
    artifacts.push(manifest("compare", cfg, &runs)?);
    artifacts.extend(event_logs(cfg, &runs));
    Ok(CommandOutput {
        artifacts,
        summary: table,
    })
}

/// Runs the sweep grid, sorted by (knob value, scheme order).
pub fn sweep_runs(cfg: &ExperimentConfig) -> Result<Vec<SchemeRun>> {
    cfg.validate()?;
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep", "a [sweep] section is required"))?;
    let mut values = sweep.values.clone();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let prepared = values
        .iter()
        .map(|&v| match sweep.knob {
            Knob::HotProbability => prepare(
                &WorkloadConfig {
                    hot_probability: v,
                    ..cfg.workload.clone()
                },
                Some(v),
            ),
            Knob::ArrivalRate => prepare(
                &WorkloadConfig {
                    arrival_rate: v,
                    ..cfg.workload.clone()
                },
                Some(v),
            ),
            Knob::Intensity => {
                let attack = cfg.attack.as_ref().expect("validated");
                prepare_attack(
                    &AttackConfig {
                        intensity: v,
                        ..attack.clone()
                    },
                    Some(v),
                )
            }
        })
        .collect::<Result<Vec<_>>>()?;
    run_grid(&prepared, &cfg.schemes, &cfg.engine)
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    let runs = sweep_runs(cfg)?;
    let rows: Vec<SweepRow> = runs
        .iter()
        .map(|r| SweepRow {
            knob_value: r.knob_value.unwrap_or_default(),
            contention_index: r.contention_index,
            report: r.output.report.clone(),
        })
        .collect();
    let table = sweep_csv(&rows);
    let mut artifacts = vec![Artifact::new("sweep.csv", table.clone())];
    if cfg.output.format == Format::Json {
        artifacts.push(Artifact::new("sweep.json", to_json(&rows)?));
    }
    artifacts.push(manifest("sweep", cfg, &runs)?);
    artifacts.extend(event_logs(cfg, &runs));
    Ok(CommandOutput {
        artifacts,
        summary: table,
    })
}

pub fn cmd_attack(cfg: &ExperimentConfig) -> Result<CommandOutput> {
    cfg.validate()?;
    let attack = cfg
        .attack
        .as_ref()
        .ok_or_else(|| Error::config("attack", "an [attack] section is required"))?;
    let outcome = run_attack(attack, &cfg.engine)?;
    let arms = [("defended", &outcome.defended), ("undefended", &outcome.undefended)];
    let mut artifacts = Vec::new();
    match cfg.output.format {
        Format::Json => {
            for (arm, result) in arms {
                let file = AttackFile {
                    arm: arm.to_string(),
                    honest_checksum: hex(outcome.honest_checksum),
                    stream_checksum: hex(outcome.stream_checksum),
                    chain_digest: hex(chain_digest(&result.output)),
                    metrics: result.metrics.clone(),
                    defense: result.defense.clone(),
                };
                artifacts.push(Artifact::new(format!("defense_{arm}.json"), to_json(&file)?));
            }
        }
        Format::Csv => artifacts.push(Artifact::new(
            "defense.csv",
            defense_csv(&outcome.defended.defense, &outcome.undefended.defense),
        )),
    }
    if cfg.engine.event_log {
        for (arm, result) in arms {
            artifacts.push(Artifact::new(format!("events_{arm}.csv"), event_log_text(&result.output.events)));
        }
    }
    let d = &outcome.defended.defense;
    let u = &outcome.undefended.defense;
    let summary = format!(
        "scenario={} defended={:?} undefended={:?} honest_success defended={} undefended={} fake_committed defended={} undefended={}\n",
        attack.scenario,
        d.verdict,
        u.verdict,
        crate::report::fixed(d.honest_success_rate, 4),
        crate::report::fixed(u.honest_success_rate, 4),
        d.fake_committed,
        u.fake_committed,
    )
    .to_lowercase();
    Ok(CommandOutput { artifacts, summary })
}
