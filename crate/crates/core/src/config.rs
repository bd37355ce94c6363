//! Experiment configuration.
//!
//! Files are TOML restricted to dotted sections and scalar or array values:
//!
//! ```toml
//! [workload]
//! n_txs = 9000
//! mix = "RW"            # "R", "RW" or "query:0.5,send_payment:0.5"
//!
//! [engine]
//! workers = 4
//! scheduling_tick_s = 0.1
//! cost.query_s = 0.001
//!
//! [experiment]
//! schemes = ["fifo", "conchain"]
//! mixes = ["R", "RW"]
//!
//! [sweep]
//! knob = "hot_probability"
//! values = [0.0, 0.5, 1.0]
//!
//! [attack]
//! scenario = "ddos"
//!
//! [output]
//! dir = "out"
//! format = "csv"
//! ```
//!
//! Durations are in virtual seconds (`_s` suffix). Every key is optional and
//! unknown keys are errors. Environment variables `CONCHAIN_<SECTION>__<KEY>`
//! override file values, with `__` standing for the dot:
//! `CONCHAIN_WORKLOAD__N_TXS=2000` sets `workload.n_txs`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::attack::AttackConfig;
use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::ledger::Scenario;
use crate::sched::Scheme;
use crate::workload::{Mix, WorkloadConfig};

pub const ENV_PREFIX: &str = "CONCHAIN_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    HotProbability,
    ArrivalRate,
    Intensity,
}

impl Knob {
    pub fn token(self) -> &'static str {
        match self {
            Knob::HotProbability => "hot_probability",
            Knob::ArrivalRate => "arrival_rate",
            Knob::Intensity => "intensity",
        }
    }

    pub fn check(self, value: f64) -> Result<()> {
        let ok = match self {
            Knob::HotProbability => (0.0..=1.0).contains(&value),
            Knob::ArrivalRate | Knob::Intensity => value.is_finite() && value > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("sweep.values", format!("{value} is outside the domain of {}", self.token())))
        }
    }
}

impl FromStr for Knob {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Knob::HotProbability, Knob::ArrivalRate, Knob::Intensity]
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| Error::config("sweep.knob", format!("unknown knob `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub knob: Knob,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            _ => Err(Error::config("output.format", format!("expected json or csv, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: Format,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            format: Format::Json,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub workload: WorkloadConfig,
    pub engine: EngineConfig,
    pub schemes: Vec<Scheme>,
    /// Mixes to run; defaults to the workload's own mix.
    pub mixes: Vec<Mix>,
    pub sweep: Option<SweepConfig>,
    /// The honest side of the attack is `workload`.
    pub attack: Option<AttackConfig>,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let workload = WorkloadConfig::default();
        ExperimentConfig {
            mixes: vec![workload.mix],
            workload,
            engine: EngineConfig::default(),
            schemes: vec![Scheme::Conchain],
            sweep: None,
            attack: None,
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config file body and applies `env` overrides (pairs of
    /// variable name and value; names without the prefix are ignored).
    pub fn parse<I, K, V>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", Value::Table(table), &mut flat);
        for (k, v) in env {
            if let Some(rest) = k.as_ref().strip_prefix(ENV_PREFIX) {
                let key = rest.to_ascii_lowercase().replace("__", ".");
                flat.insert(key, env_value(v.as_ref()));
            }
        }
        let cfg = Builder { flat }.build()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Same as [`ExperimentConfig::parse`] with the process environment.
    pub fn parse_with_process_env(text: &str) -> Result<Self> {
        Self::parse(text, std::env::vars())
    }

    pub fn validate(&self) -> Result<()> {
        self.workload.validate()?;
        self.engine.validate()?;
        if self.schemes.is_empty() {
            return Err(Error::config("experiment.schemes", "need at least one scheme"));
        }
        if self.mixes.is_empty() {
            return Err(Error::config("experiment.mixes", "need at least one mix"));
        }
        let mut labels = std::collections::BTreeSet::new();
        for m in &self.mixes {
            m.validate()?;
            if !labels.insert(m.label()) {
                return Err(Error::config("experiment.mixes", format!("duplicate mix label `{}`", m.label())));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::config("sweep.values", "need at least one value"));
            }
            for v in &sweep.values {
                sweep.knob.check(*v)?;
            }
            if sweep.knob == Knob::Intensity && self.attack.is_none() {
                return Err(Error::config("sweep.knob", "intensity sweeps need an [attack] section"));
            }
        }
        if let Some(a) = &self.attack {
            a.validate()?;
        }
        Ok(())
    }

    /// Overrides every seed in the config.
    pub fn set_seed(&mut self, seed: u64) {
        self.workload.seed = seed;
        self.engine.seed = seed;
        if let Some(a) = &mut self.attack {
            a.seed = seed;
            a.honest.seed = seed;
        }
    }
}

fn flatten(prefix: &str, value: Value, out: &mut BTreeMap<String, Value>) {
    match value {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other);
        }
    }
}

/// Environment values are TOML literals when they parse as one, strings
/// otherwise.
fn env_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

struct Builder {
    flat: BTreeMap<String, Value>,
}

impl Builder {
    fn take(&mut self, key: &str) -> Option<Value> {
        self.flat.remove(key)
    }

    fn has_section(&self, section: &str) -> bool {
        let dotted = format!("{section}.");
        self.flat.keys().any(|k| k.starts_with(&dotted))
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(f)),
            Some(Value::Integer(i)) => Ok(Some(i as f64)),
            Some(v) => Err(type_error(key, "a number", &v)),
        }
    }

    fn u64(&mut self, key: &str) -> Result<Option<u64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if i >= 0 => Ok(Some(i as u64)),
            Some(v) => Err(type_error(key, "a non-negative integer", &v)),
        }
    }

    fn usize(&mut self, key: &str) -> Result<Option<usize>> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    fn bool(&mut self, key: &str) -> Result<Option<bool>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(b)),
            Some(v) => Err(type_error(key, "a boolean", &v)),
        }
    }

    fn string(&mut self, key: &str) -> Result<Option<String>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(type_error(key, "a string", &v)),
        }
    }

    fn strings(&mut self, key: &str) -> Result<Option<Vec<String>>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .into_iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s),
                    other => Err(type_error(key, "an array of strings", &other)),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(Value::String(s)) => Ok(Some(s.split(',').map(|p| p.trim().to_string()).collect())),
            Some(v) => Err(type_error(key, "an array of strings", &v)),
        }
    }

    fn numbers(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .into_iter()
                .map(|v| match v {
                    Value::Float(f) => Ok(f),
                    Value::Integer(i) => Ok(i as f64),
                    other => Err(type_error(key, "an array of numbers", &other)),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(v) => Err(type_error(key, "an array of numbers", &v)),
        }
    }

    /// Seconds to whole microseconds.
    fn micros(&mut self, key: &str) -> Result<Option<u64>> {
        match self.f64(key)? {
            None => Ok(None),
            Some(s) if s.is_finite() && s > 0.0 => Ok(Some((s * 1e6).round() as u64)),
            Some(s) => Err(Error::config(key, format!("duration must be positive, got {s}"))),
        }
    }

    fn parsed<T: FromStr<Err = Error>>(&mut self, key: &str) -> Result<Option<T>> {
        self.string(key)?.map(|s| s.parse()).transpose()
    }

    fn workload(&mut self) -> Result<WorkloadConfig> {
        let mut w = WorkloadConfig::default();
        set(&mut w.n_accounts, self.usize("workload.n_accounts")?);
        set(&mut w.initial_checking, self.u64("workload.initial_checking")?);
        set(&mut w.initial_savings, self.u64("workload.initial_savings")?);
        set(&mut w.n_txs, self.usize("workload.n_txs")?);
        if let Some(m) = self.string("workload.mix")? {
            w.mix = Mix::parse(&m)?;
        }
        set(&mut w.hot_accounts, self.usize("workload.hot_accounts")?);
        set(&mut w.hot_probability, self.f64("workload.hot_probability")?);
        set(&mut w.arrival_rate, self.f64("workload.arrival_rate")?);
        set(&mut w.seed, self.u64("workload.seed")?);
        set(&mut w.min_amount, self.u64("workload.min_amount")?);
        set(&mut w.max_amount, self.u64("workload.max_amount")?);
        Ok(w)
    }

    fn engine(&mut self) -> Result<EngineConfig> {
        let mut e = EngineConfig::default();
        set(&mut e.workers, self.usize("engine.workers")?);
        set(&mut e.scheduling_tick_us, self.micros("engine.scheduling_tick_s")?);
        if let Some(r) = self.usize("engine.rounds_per_tick")? {
            e.rounds_per_tick = Some(r);
        }
        set(&mut e.block_max_txs, self.usize("engine.block_max_txs")?);
        set(&mut e.block_interval_us, self.micros("engine.block_interval_s")?);
        let c = &mut e.cost;
        set(&mut c.query_us, self.micros("engine.cost.query_s")?);
        set(&mut c.deposit_checking_us, self.micros("engine.cost.deposit_checking_s")?);
        set(&mut c.transact_savings_us, self.micros("engine.cost.transact_savings_s")?);
        set(&mut c.send_payment_us, self.micros("engine.cost.send_payment_s")?);
        set(&mut c.write_check_us, self.micros("engine.cost.write_check_s")?);
        set(&mut c.amalgamate_us, self.micros("engine.cost.amalgamate_s")?);
        if let Some(ttl) = self.micros("engine.queue_ttl_s")? {
            e.queue_ttl_us = Some(ttl);
        }
        if let Some(lo) = self.f64("engine.lock_overhead_s")? {
            if !(lo.is_finite() && lo >= 0.0) {
                return Err(Error::config("engine.lock_overhead_s", "must be non-negative"));
            }
            e.lock_overhead_us = (lo * 1e6).round() as u64;
        }
        set(&mut e.infra_failure_prob, self.f64("engine.infra_failure_prob")?);
        set(&mut e.max_hold_rounds, self.u64("engine.max_hold_rounds")?);
        set(&mut e.screening, self.bool("engine.screening")?);
        set(&mut e.event_log, self.bool("engine.event_log")?);
        set(&mut e.seed, self.u64("engine.seed")?);
        Ok(e)
    }

    fn attack(&mut self, honest: &WorkloadConfig) -> Result<Option<AttackConfig>> {
        if !self.has_section("attack") {
            return Ok(None);
        }
        let mut a = AttackConfig {
            honest: honest.clone(),
            seed: honest.seed,
            ..AttackConfig::default()
        };
        a.scenario = self
            .parsed::<Scenario>("attack.scenario")?
            .ok_or_else(|| Error::config("attack.scenario", "required in an [attack] section"))?;
        set(&mut a.intensity, self.f64("attack.intensity")?);
        set(&mut a.target_wallets, self.usize("attack.target_wallets")?);
        set(&mut a.seed, self.u64("attack.seed")?);
        set(&mut a.burst_period_us, self.micros("attack.burst_period_s")?);
        set(&mut a.ddos_queue_ttl_us, self.micros("attack.ddos_queue_ttl_s")?);
        set(&mut a.ddos_rounds_per_tick, self.usize("attack.ddos_rounds_per_tick")?);
        set(&mut a.ddos_min_honest_success, self.f64("attack.ddos_min_honest_success")?);
        Ok(Some(a))
    }

    fn build(mut self) -> Result<ExperimentConfig> {
        let workload = self.workload()?;
        let engine = self.engine()?;
        let schemes = match self.strings("experiment.schemes")? {
            Some(names) => names
                .iter()
                .map(|n| n.parse().map_err(|e: Error| Error::config("experiment.schemes", e.to_string())))
                .collect::<Result<Vec<Scheme>>>()?,
            None => vec![Scheme::Conchain],
        };
        let mixes = match self.strings("experiment.mixes")? {
            Some(specs) => specs.iter().map(|s| Mix::parse(s)).collect::<Result<Vec<_>>>()?,
            None => vec![workload.mix],
        };
        let sweep = if self.has_section("sweep") {
            let knob = self
                .parsed::<Knob>("sweep.knob")?
                .ok_or_else(|| Error::config("sweep.knob", "required in a [sweep] section"))?;
            let values = self
                .numbers("sweep.values")?
                .ok_or_else(|| Error::config("sweep.values", "required in a [sweep] section"))?;
            Some(SweepConfig { knob, values })
        } else {
            None
        };
        let attack = self.attack(&workload)?;
        let mut output = OutputConfig::default();
        if let Some(dir) = self.string("output.dir")? {
            output.dir = PathBuf::from(dir);
        }
        set(&mut output.format, self.parsed("output.format")?);
        if let Some(key) = self.flat.keys().next() {
            return Err(Error::config(key.clone(), "unknown key"));
        }
        Ok(ExperimentConfig {
            workload,
            engine,
            schemes,
            mixes,
            sweep,
            attack,
            output,
        })
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn type_error(key: &str, expected: &str, got: &Value) -> Error {
    Error::config(key, format!("expected {expected}, got {}", got.type_str()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const NO_ENV: [(&str, &str); 0] = [];

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::parse("", NO_ENV).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn sections_and_units() {
        let text = r#"
[workload]
n_txs = 100
mix = "R"
hot_probability = 0.25

[engine]
workers = 8
scheduling_tick_s = 0.05
queue_ttl_s = 30
cost.query_s = 0.0005

[experiment]
schemes = ["fifo", "conchain"]
mixes = ["R", "RW"]

[output]
format = "csv"
"#;
        let cfg = ExperimentConfig::parse(text, NO_ENV).unwrap();
        assert_eq!(cfg.workload.n_txs, 100);
        assert_eq!(cfg.workload.mix, Mix::read_only());
        assert_eq!(cfg.engine.workers, 8);
        assert_eq!(cfg.engine.scheduling_tick_us, 50_000);
        assert_eq!(cfg.engine.queue_ttl_us, Some(30_000_000));
        assert_eq!(cfg.engine.cost.query_us, 500);
        assert_eq!(cfg.schemes, vec![Scheme::Fifo, Scheme::Conchain]);
        assert_eq!(cfg.mixes.len(), 2);
        assert_eq!(cfg.output.format, Format::Csv);
    }

    #[test]
    fn dotted_keys_at_top_level() {
        let cfg = ExperimentConfig::parse("workload.n_txs = 7\nengine.workers = 2\n", NO_ENV).unwrap();
        assert_eq!((cfg.workload.n_txs, cfg.engine.workers), (7, 2));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::parse("[workload]\nn_tx = 5\n", NO_ENV).unwrap_err();
        assert!(err.to_string().contains("workload.n_tx"), "{err}");
    }

    #[test]
    fn bad_values_name_their_key() {
        for (text, key) in [
            ("workload.hot_probability = 1.5", "workload.hot_probability"),
            ("engine.workers = 0", "engine.workers"),
            ("engine.workers = \"four\"", "engine.workers"),
            ("experiment.schemes = [\"fifo\", \"bogus\"]", "experiment.schemes"),
            ("sweep.knob = \"hot_probability\"\nsweep.values = [2.0]", "sweep.values"),
            ("sweep.knob = \"latency\"\nsweep.values = [1.0]", "sweep.knob"),
            ("attack.intensity = 1.0", "attack.scenario"),
        ] {
            let err = ExperimentConfig::parse(text, NO_ENV).unwrap_err().to_string();
            assert!(err.contains(key), "{text}: {err}");
        }
    }

    #[test]
    fn env_overrides_file() {
        let env = [
            ("CONCHAIN_WORKLOAD__N_TXS", "2000"),
            ("CONCHAIN_EXPERIMENT__SCHEMES", "fifo,locking"),
            ("CONCHAIN_OUTPUT__FORMAT", "csv"),
            ("UNRELATED", "x"),
        ];
        let cfg = ExperimentConfig::parse("workload.n_txs = 10", env).unwrap();
        assert_eq!(cfg.workload.n_txs, 2000);
        assert_eq!(cfg.schemes, vec![Scheme::Fifo, Scheme::Locking]);
        assert_eq!(cfg.output.format, Format::Csv);
    }

    #[test]
    fn attack_section_uses_workload_as_honest_side() {
        let text = "workload.n_txs = 300\nworkload.seed = 9\n[attack]\nscenario = \"ddos\"\nintensity = 2\n";
        let cfg = ExperimentConfig::parse(text, NO_ENV).unwrap();
        let a = cfg.attack.unwrap();
        assert_eq!(a.scenario, Scenario::DDoS);
        assert_eq!(a.honest.n_txs, 300);
        assert_eq!(a.seed, 9);
        assert_eq!(a.intensity, 2.0);
    }

    #[test]
    fn seed_override_reaches_everything() {
        let mut cfg = ExperimentConfig::parse("[attack]\nscenario = \"balance\"\n", NO_ENV).unwrap();
        cfg.set_seed(77);
        let a = cfg.attack.as_ref().unwrap();
        assert_eq!((cfg.workload.seed, cfg.engine.seed, a.seed, a.honest.seed), (77, 77, 77, 77));
    }

    #[test]
    fn syntax_error_reported() {
        assert!(matches!(
            ExperimentConfig::parse("[workload\n", NO_ENV),
            Err(Error::ConfigParse(_))
        ));
    }
}
