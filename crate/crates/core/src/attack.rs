//! Adversarial stream generators and defense evaluation.
//!
//! Every generator starts from an honest stream, adds attacker transactions
//! tagged with their [`Origin`], and merges both by submit time. Attacker
//! volume is `round(intensity * honest count)` transactions (pairs for the
//! double-spend scenario).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::block::{count_forks, Block};
use crate::engine::{run_simulation, EngineConfig, MetricsReport, PerTx, SimOutput};
use crate::error::{Error, Result};
use crate::ledger::{Account, AttackRole, LedgerState, Money, Operation, Origin, Scenario, StatusKind, Transaction, WalletId};
use crate::rng::SimRng;
use crate::sched::Scheme;
use crate::workload::{generate_workload, Mix, TxStream, WorkloadConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub scenario: Scenario,
    pub honest: WorkloadConfig,
    pub intensity: f64,
    pub target_wallets: usize,
    pub seed: u64,
    /// Spacing of balance-attack bursts; matches the default block interval.
    pub burst_period_us: u64,
    pub ddos_queue_ttl_us: u64,
    pub ddos_rounds_per_tick: usize,
    pub ddos_min_honest_success: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            scenario: Scenario::DoubleSpend,
            honest: WorkloadConfig {
                n_txs: 1000,
                arrival_rate: 200.0,
                mix: Mix::read_write(),
                ..WorkloadConfig::default()
            },
            intensity: 10.0,
            target_wallets: 10,
            seed: 42,
            burst_period_us: 1_000_000,
            ddos_queue_ttl_us: 30_000_000,
            ddos_rounds_per_tick: 10,
            ddos_min_honest_success: 0.90,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        self.honest.validate()?;
        if !(self.intensity.is_finite() && self.intensity > 0.0) {
            return Err(Error::config("attack.intensity", "must be a positive number"));
        }
        if self.target_wallets == 0 || self.target_wallets > self.honest.n_accounts {
            return Err(Error::config(
                "attack.target_wallets",
                format!("must be within 1..={}", self.honest.n_accounts),
            ));
        }
        let pairs = matches!(self.scenario, Scenario::DoubleSpend | Scenario::Balance);
        if pairs && self.honest.initial_checking + self.honest.initial_savings < 2 {
            return Err(Error::config(
                "workload.initial_checking",
                "double-spend pairs need funded accounts",
            ));
        }
        if self.burst_period_us == 0 {
            return Err(Error::config("attack.burst_period_s", "must be positive"));
        }
        if self.ddos_queue_ttl_us == 0 {
            return Err(Error::config("attack.ddos_queue_ttl_s", "must be positive"));
        }
        if self.ddos_rounds_per_tick == 0 {
            return Err(Error::config("attack.ddos_rounds_per_tick", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.ddos_min_honest_success) {
            return Err(Error::config("attack.ddos_min_honest_success", "must be within [0, 1]"));
        }
        Ok(())
    }

    fn honest_config(&self) -> WorkloadConfig {
        WorkloadConfig {
            seed: self.seed,
            ..self.honest.clone()
        }
    }

    pub fn honest_stream(&self) -> Result<TxStream> {
        generate_workload(&self.honest_config())
    }

    /// Honest initial balances plus the attacker wallets, which hold the same
    /// total entirely in checking.
    pub fn initial_state(&self) -> LedgerState {
        let mut state = self.honest.initial_state();
        let total = self.honest.initial_checking + self.honest.initial_savings;
        for i in 0..self.target_wallets {
            state.accounts.insert(self.attacker_wallet(i), Account::funded(total, 0));
        }
        state
    }

    /// Funded wallets the attacker controls, numbered after the honest
    /// accounts so honest traffic never touches them.
    fn attacker_wallet(&self, i: usize) -> WalletId {
        WalletId::account(self.honest.n_accounts + i % self.target_wallets)
    }

    /// An honest account picked with the honest hot-spot skew.
    fn victim(&self, rng: &mut SimRng) -> WalletId {
        let h = &self.honest;
        let pool = h.n_accounts as u64;
        let hot = h.hot_accounts as u64;
        let i = if hot > 0 && rng.chance(h.hot_probability) {
            rng.below(hot)
        } else {
            rng.below(pool)
        };
        WalletId::account(i as usize)
    }

    fn attacker_count(&self, honest: usize) -> usize {
        (self.intensity * honest as f64).round() as usize
    }
}

/// An attacker operation before ids are assigned.
struct Draft {
    submit_us: u64,
    op: Operation,
    role: AttackRole,
}

fn horizon(honest: &TxStream) -> u64 {
    honest.txs.last().map_or(0, |t| t.submit_us())
}

fn sorted_times(rng: &mut SimRng, n: usize, horizon: u64) -> Vec<u64> {
    let mut times: Vec<u64> = (0..n).map(|_| rng.below(horizon + 1)).collect();
    times.sort_unstable();
    times
}

fn ghost(j: usize) -> WalletId {
    WalletId::new(format!("ghost{j:06}")).expect("non-empty")
}

/// Two payments of 80% of the attacker wallet's starting balance to two
/// merchants. Each is affordable alone; together they over-commit.
fn double_spend_pair(cfg: &AttackConfig, rng: &mut SimRng, i: usize, at: u64) -> [Draft; 2] {
    let from = cfg.attacker_wallet(i);
    let total: Money = cfg.honest.initial_checking + cfg.honest.initial_savings;
    let amount = (total * 4).div_ceil(5);
    [
        Draft {
            submit_us: at,
            op: Operation::SendPayment(from.clone(), cfg.victim(rng), amount),
            role: AttackRole::Cover,
        },
        Draft {
            submit_us: at + 1,
            op: Operation::SendPayment(from, cfg.victim(rng), amount),
            role: AttackRole::Fake,
        },
    ]
}

/// A fabricated spend: a victim's money moved to a wallet the ledger has
/// never seen.
fn fabricated_spend(cfg: &AttackConfig, rng: &mut SimRng, ghost_id: usize, at: u64) -> Draft {
    let amount = rng.range(cfg.honest.min_amount, cfg.honest.max_amount);
    Draft {
        submit_us: at,
        op: Operation::SendPayment(cfg.victim(rng), ghost(ghost_id), amount),
        role: AttackRole::Fake,
    }
}

fn merge(cfg: &AttackConfig, honest: TxStream, drafts: Vec<Draft>) -> Result<TxStream> {
    let scenario = cfg.scenario;
    // (submit, honest first, position) keeps the merge stable.
    let mut keyed: Vec<(u64, u8, usize, Transaction)> = honest
        .txs
        .into_iter()
        .enumerate()
        .map(|(i, t)| (t.submit_us(), 0, i, t))
        .collect();
    for (i, d) in drafts.into_iter().enumerate() {
        let origin = Origin::Attacker { scenario, role: d.role };
        keyed.push((d.submit_us, 1, i, Transaction::new(0, d.submit_us, d.op, origin)?));
    }
    keyed.sort_by_key(|(t, side, i, _)| (*t, *side, *i));
    let txs = keyed
        .into_iter()
        .enumerate()
        .map(|(id, (submit, _, _, t))| t.relabeled(id as u64, submit))
        .collect();
    TxStream::new(txs)
}

pub fn gen_double_spend(cfg: &AttackConfig) -> Result<TxStream> {
    cfg.validate()?;
    let honest = cfg.honest_stream()?;
    let mut rng = SimRng::derive(cfg.seed, "double_spend");
    let pairs = cfg.attacker_count(honest.len());
    let times = sorted_times(&mut rng, pairs, horizon(&honest));
    let mut drafts = Vec::with_capacity(2 * pairs);
    for (i, at) in times.into_iter().enumerate() {
        drafts.extend(double_spend_pair(cfg, &mut rng, i, at));
    }
    merge(cfg, honest, drafts)
}

/// Fabricated transactions over wallets the ledger does not know: deposits
/// into ghost wallets alternating with spends from victims into them.
pub fn gen_block_withholding(cfg: &AttackConfig) -> Result<TxStream> {
    cfg.validate()?;
    let honest = cfg.honest_stream()?;
    let mut rng = SimRng::derive(cfg.seed, "block_withholding");
    let n = cfg.attacker_count(honest.len());
    let times = sorted_times(&mut rng, n, horizon(&honest));
    let mut drafts = Vec::with_capacity(n);
    for (j, at) in times.into_iter().enumerate() {
        if j % 2 == 0 {
            let amount = rng.range(cfg.honest.min_amount, cfg.honest.max_amount);
            drafts.push(Draft {
                submit_us: at,
                op: Operation::DepositChecking(ghost(j / 2), amount),
                role: AttackRole::Fake,
            });
        } else {
            drafts.push(fabricated_spend(cfg, &mut rng, j / 2, at));
        }
    }
    merge(cfg, honest, drafts)
}

/// Bursts end one microsecond before each block-interval boundary inside the
/// honest horizon. Each burst mixes fabricated spends with double-spend
/// pairs.
pub fn gen_balance_attack(cfg: &AttackConfig) -> Result<TxStream> {
    cfg.validate()?;
    let honest = cfg.honest_stream()?;
    let mut rng = SimRng::derive(cfg.seed, "balance");
    let n = cfg.attacker_count(honest.len());
    let period = cfg.burst_period_us;
    let bursts = (horizon(&honest) / period).max(1) as usize;
    let mut drafts = Vec::with_capacity(n + 1);
    let mut pair = 0;
    let mut ghosts = 0;
    for b in 0..bursts {
        let size = n / bursts + usize::from(b < n % bursts);
        let boundary = (b as u64 + 1) * period;
        let mut t = boundary.saturating_sub(size as u64 + 1);
        let mut emitted = 0;
        while emitted < size {
            if emitted % 3 == 0 || size - emitted < 2 {
                drafts.push(fabricated_spend(cfg, &mut rng, ghosts, t));
                ghosts += 1;
                t += 1;
                emitted += 1;
            } else {
                drafts.extend(double_spend_pair(cfg, &mut rng, pair, t));
                pair += 1;
                t += 2;
                emitted += 2;
            }
        }
    }
    drafts.sort_by_key(|d| d.submit_us);
    merge(cfg, honest, drafts)
}

/// Valid one-unit payments out of the first attacker wallet, each to one of
/// the `target_wallets - 1` most popular honest accounts in turn, so every
/// two flood transactions conflict and all debits land on the attacker.
/// With a single target the flood is deposits into that wallet.
pub fn gen_ddos(cfg: &AttackConfig) -> Result<TxStream> {
    cfg.validate()?;
    let honest = cfg.honest_stream()?;
    let mut rng = SimRng::derive(cfg.seed, "ddos");
    let n = cfg.attacker_count(honest.len());
    let anchor = cfg.attacker_wallet(0);
    let popular = cfg.target_wallets - 1;
    let drafts = sorted_times(&mut rng, n, horizon(&honest))
        .into_iter()
        .enumerate()
        .map(|(i, at)| {
            let op = if popular == 0 {
                Operation::DepositChecking(anchor.clone(), 1)
            } else {
                Operation::SendPayment(anchor.clone(), WalletId::account(i % popular), 1)
            };
            Draft {
                submit_us: at,
                op,
                role: AttackRole::Flood,
            }
        })
        .collect();
    merge(cfg, honest, drafts)
}

pub fn gen_attack(cfg: &AttackConfig) -> Result<TxStream> {
    match cfg.scenario {
        Scenario::DoubleSpend => gen_double_spend(cfg),
        Scenario::BlockWithholding => gen_block_withholding(cfg),
        Scenario::Balance => gen_balance_attack(cfg),
        Scenario::DDoS => gen_ddos(cfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseReport {
    pub scenario: Scenario,
    pub scheme: String,
    pub attacker_txs: u64,
    pub fake_committed: u64,
    pub fake_rejected: u64,
    pub fake_expired: u64,
    pub fake_aborted: u64,
    /// Attacker transactions that are valid on their own (cover and flood).
    pub valid_attacker_committed: u64,
    pub valid_attacker_rejected: u64,
    pub valid_attacker_expired: u64,
    pub valid_attacker_aborted: u64,
    pub attacker_dispatched: u64,
    pub fakes_in_blocks: u64,
    pub honest_txs: u64,
    pub honest_success_rate: f64,
    /// Seconds.
    pub honest_mean_latency: f64,
    pub chain_forks: u64,
    pub verdict: Verdict,
}

#[derive(Default)]
struct Tally {
    committed: u64,
    rejected: u64,
    expired: u64,
    aborted: u64,
}

impl Tally {
    fn add(&mut self, kind: StatusKind) {
        match kind {
            StatusKind::Committed => self.committed += 1,
            StatusKind::RejectedFake => self.rejected += 1,
            StatusKind::Expired => self.expired += 1,
            _ => self.aborted += 1,
        }
    }
}

pub fn evaluate_defense(
    report: &MetricsReport,
    per_tx: &PerTx,
    chain: &[Block],
    scenario: Scenario,
    ddos_min_honest_success: f64,
) -> Result<DefenseReport> {
    let mut fake = Tally::default();
    let mut valid = Tally::default();
    let mut honest = Tally::default();
    let mut honest_latency = 0u128;
    let mut attacker_txs = 0;
    let mut attacker_dispatched = 0;
    let mut fake_ids = BTreeSet::new();
    for (id, o) in per_tx {
        match o.origin {
            Origin::Honest => {
                honest.add(o.status.kind());
                honest_latency += u128::from(o.latency_us);
            }
            Origin::Attacker { scenario: s, role } => {
                if s != scenario {
                    return Err(Error::ScenarioMismatch(format!(
                        "transaction {id} belongs to `{s}`, evaluated as `{scenario}`"
                    )));
                }
                attacker_txs += 1;
                attacker_dispatched += u64::from(o.dispatched);
                if role == AttackRole::Fake {
                    fake.add(o.status.kind());
                    fake_ids.insert(*id);
                } else {
                    valid.add(o.status.kind());
                }
            }
        }
    }
    if attacker_txs == 0 {
        return Err(Error::ScenarioMismatch(format!(
            "run of `{}` has no attacker transactions",
            report.scheme
        )));
    }
    let honest_txs = honest.committed + honest.rejected + honest.expired + honest.aborted;
    let honest_success_rate = if honest_txs == 0 {
        0.0
    } else {
        honest.committed as f64 / honest_txs as f64
    };
    let honest_mean_latency = if honest_txs == 0 {
        0.0
    } else {
        honest_latency as f64 / honest_txs as f64 / 1e6
    };
    let fakes_in_blocks = chain
        .iter()
        .flat_map(|b| &b.txs)
        .filter(|(id, st)| st.is_committed() && fake_ids.contains(id))
        .count() as u64;
    let chain_forks = count_forks(chain) as u64;
    let pass = match scenario {
        Scenario::DoubleSpend => fake.committed == 0,
        Scenario::BlockWithholding => fake.committed == 0 && attacker_dispatched == 0,
        Scenario::Balance => fake.committed == 0 && chain_forks == 0 && fakes_in_blocks == 0,
        Scenario::DDoS => honest_success_rate >= ddos_min_honest_success,
    };
    Ok(DefenseReport {
        scenario,
        scheme: report.scheme.clone(),
        attacker_txs,
        fake_committed: fake.committed,
        fake_rejected: fake.rejected,
        fake_expired: fake.expired,
        fake_aborted: fake.aborted,
        valid_attacker_committed: valid.committed,
        valid_attacker_rejected: valid.rejected,
        valid_attacker_expired: valid.expired,
        valid_attacker_aborted: valid.aborted,
        attacker_dispatched,
        fakes_in_blocks,
        honest_txs,
        honest_success_rate,
        honest_mean_latency,
        chain_forks,
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
    })
}

/// ConChain with screening; for DDoS also the queue TTL and a bounded round
/// budget. Aging is pushed past the TTL horizon so held flood traffic expires
/// instead of being force-dispatched.
pub fn defended_engine(cfg: &AttackConfig, base: &EngineConfig) -> EngineConfig {
    let mut e = EngineConfig {
        screening: true,
        ..base.clone()
    };
    if cfg.scenario == Scenario::DDoS {
        e.queue_ttl_us = Some(cfg.ddos_queue_ttl_us);
        e.rounds_per_tick = Some(cfg.ddos_rounds_per_tick);
        e.max_hold_rounds = e.max_hold_rounds.max(cfg.ddos_queue_ttl_us / e.scheduling_tick_us + 1);
    }
    e
}

/// FIFO without screening or expiry.
pub fn undefended_engine(base: &EngineConfig) -> EngineConfig {
    EngineConfig {
        screening: false,
        queue_ttl_us: None,
        ..base.clone()
    }
}

#[derive(Debug, Clone)]
pub struct ArmResult {
    pub metrics: MetricsReport,
    pub defense: DefenseReport,
    pub output: SimOutput,
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub honest_checksum: u64,
    pub stream_checksum: u64,
    pub defended: ArmResult,
    pub undefended: ArmResult,
}

pub fn run_arm(
    cfg: &AttackConfig,
    stream: &TxStream,
    scheme: Scheme,
    engine: &EngineConfig,
) -> Result<ArmResult> {
    let output = run_simulation(stream, scheme, &cfg.initial_state(), engine, &cfg.honest.mix.label())?;
    let defense = evaluate_defense(
        &output.report,
        &output.per_tx,
        &output.chain,
        cfg.scenario,
        cfg.ddos_min_honest_success,
    )?;
    Ok(ArmResult {
        metrics: output.report.clone(),
        defense,
        output,
    })
}

/// Both arms on one attack stream.
pub fn run_attack(cfg: &AttackConfig, base: &EngineConfig) -> Result<AttackOutcome> {
    let stream = gen_attack(cfg)?;
    let honest_checksum = cfg.honest_stream()?.checksum();
    let (defended, undefended) = rayon::join(
        || run_arm(cfg, &stream, Scheme::Conchain, &defended_engine(cfg, base)),
        || run_arm(cfg, &stream, Scheme::Fifo, &undefended_engine(base)),
    );
    let (defended, undefended) = (defended?, undefended?);
    Ok(AttackOutcome {
        honest_checksum,
        stream_checksum: stream.checksum(),
        defended,
        undefended,
    })
}
