//! Seeded SmallBank transaction streams with tunable contention.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::depman::count_conflicting_pairs;
use crate::digest::digest64;
use crate::error::{Error, Result};
use crate::ledger::{LedgerState, Money, OpKind, Operation, Transaction, WalletId};
use crate::rng::SimRng;

/// Relative weight per operation kind, indexed like [`OpKind::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mix {
    pub weights: [f64; 6],
}

impl Mix {
    /// Read-only preset.
    pub fn read_only() -> Self {
        Mix {
            weights: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        }
    }

    /// Write-heavy preset.
    pub fn read_write() -> Self {
        Mix {
            weights: [0.30, 0.15, 0.15, 0.25, 0.10, 0.05],
        }
    }

    pub fn only(kind: OpKind) -> Self {
        let mut weights = [0.0; 6];
        weights[kind.index()] = 1.0;
        Mix { weights }
    }

    pub fn weight(&self, kind: OpKind) -> f64 {
        self.weights[kind.index()]
    }

    pub fn normalized(&self) -> [f64; 6] {
        let total: f64 = self.weights.iter().sum();
        self.weights.map(|w| w / total)
    }

    /// Parses `R`, `RW`, or a list such as `query:0.5,send_payment:0.5`.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "R" => return Ok(Mix::read_only()),
            "RW" => return Ok(Mix::read_write()),
            _ => {}
        }
        let mut weights = [0.0; 6];
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (kind, w) = part
                .split_once(':')
                .ok_or_else(|| Error::config("workload.mix", format!("expected kind:weight, got `{part}`")))?;
            let kind: OpKind = kind.trim().parse().map_err(|e: Error| Error::config("workload.mix", e.to_string()))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| Error::config("workload.mix", format!("bad weight `{w}`")))?;
            weights[kind.index()] = w;
        }
        let mix = Mix { weights };
        mix.validate()?;
        Ok(mix)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config("workload.mix", "weights must be finite and non-negative"));
        }
        if !self.weights.iter().any(|w| *w > 0.0) {
            return Err(Error::config("workload.mix", "at least one weight must be positive"));
        }
        Ok(())
    }

    /// Short label: `R`, `RW`, or `custom`.
    pub fn label(&self) -> String {
        if *self == Mix::read_only() {
            "R".into()
        } else if *self == Mix::read_write() {
            "RW".into()
        } else {
            "custom".into()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub n_accounts: usize,
    pub initial_checking: Money,
    pub initial_savings: Money,
    pub n_txs: usize,
    pub mix: Mix,
    pub hot_accounts: usize,
    pub hot_probability: f64,
    /// Transactions per virtual second.
    pub arrival_rate: f64,
    pub seed: u64,
    pub min_amount: Money,
    pub max_amount: Money,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            n_accounts: 1000,
            initial_checking: 10_000,
            initial_savings: 10_000,
            n_txs: 9000,
            mix: Mix::read_write(),
            hot_accounts: 10,
            hot_probability: 0.5,
            arrival_rate: 200.0,
            seed: 42,
            min_amount: 1,
            max_amount: 50,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        self.mix.validate()?;
        if self.n_accounts == 0 {
            return Err(Error::config("workload.n_accounts", "must be at least 1"));
        }
        if self.hot_accounts > self.n_accounts {
            return Err(Error::config("workload.hot_accounts", "must not exceed n_accounts"));
        }
        if !(0.0..=1.0).contains(&self.hot_probability) {
            return Err(Error::config("workload.hot_probability", "must be within [0, 1]"));
        }
        if !(self.arrival_rate.is_finite() && self.arrival_rate > 0.0) {
            return Err(Error::config("workload.arrival_rate", "must be positive"));
        }
        if self.min_amount == 0 || self.min_amount > self.max_amount {
            return Err(Error::config("workload.min_amount", "need 1 <= min_amount <= max_amount"));
        }
        let two_wallet = self.mix.weight(OpKind::SendPayment) > 0.0 || self.mix.weight(OpKind::Amalgamate) > 0.0;
        if two_wallet && self.n_accounts < 2 {
            return Err(Error::config("workload.n_accounts", "two-wallet operations need at least 2 accounts"));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> LedgerState {
        LedgerState::with_accounts(self.n_accounts, self.initial_checking, self.initial_savings)
    }
}

/// Transactions ordered by submit time with ids `0..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxStream {
    pub txs: Vec<Transaction>,
}

impl TxStream {
    pub fn new(txs: Vec<Transaction>) -> Result<Self> {
        for pair in txs.windows(2) {
            if pair[1].submit_us() < pair[0].submit_us() {
                return Err(Error::InvalidOperation(format!(
                    "submit time decreases at transaction {}",
                    pair[1].id()
                )));
            }
            if pair[1].id() <= pair[0].id() {
                return Err(Error::InvalidOperation(format!("ids not increasing at {}", pair[1].id())));
            }
        }
        Ok(TxStream { txs })
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    /// Line-delimited `id,submit_time_us,op_kind,arg_wallets,amount`,
    /// wallets joined by `;`.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for t in &self.txs {
            let wallets: Vec<&str> = t.op().wallets().iter().map(|w| w.as_str()).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                t.id(),
                t.submit_us(),
                t.op().kind().token(),
                wallets.join(";"),
                t.op().amount()
            );
        }
        out
    }

    /// Parses [`TxStream::export`] output. All transactions come back honest.
    pub fn import(text: &str) -> Result<Self> {
        let mut txs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| Error::MalformedRecord { line: line_no, reason };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(bad(format!("expected 5 fields, got {}", fields.len())));
            }
            let id: u64 = fields[0].parse().map_err(|_| bad(format!("bad id `{}`", fields[0])))?;
            let submit: u64 = fields[1].parse().map_err(|_| bad(format!("bad time `{}`", fields[1])))?;
            let kind: OpKind = fields[2].parse().map_err(|e: Error| bad(e.to_string()))?;
            let wallets = fields[3]
                .split(';')
                .map(WalletId::new)
                .collect::<Result<Vec<_>>>()
                .map_err(|e| bad(e.to_string()))?;
            let amount: Money = fields[4].parse().map_err(|_| bad(format!("bad amount `{}`", fields[4])))?;
            let op = Operation::from_parts(kind, &wallets, amount).map_err(|e| bad(e.to_string()))?;
            txs.push(Transaction::honest(id, submit, op).map_err(|e| bad(e.to_string()))?);
        }
        TxStream::new(txs)
    }

    /// Digest of the exported form; equal streams give equal checksums.
    pub fn checksum(&self) -> u64 {
        digest64(self.export().as_bytes())
    }
}

struct WalletPicker {
    n: u64,
    hot: u64,
    p_hot: f64,
}

impl WalletPicker {
    fn pick(&self, rng: &mut SimRng) -> u64 {
        if self.hot == 0 || self.hot == self.n {
            return rng.below(self.n);
        }
        if rng.chance(self.p_hot) {
            rng.below(self.hot)
        } else {
            self.hot + rng.below(self.n - self.hot)
        }
    }

    fn pick_other(&self, rng: &mut SimRng, a: u64) -> u64 {
        for _ in 0..16 {
            let b = self.pick(rng);
            if b != a {
                return b;
            }
        }
        (a + 1 + rng.below(self.n - 1)) % self.n
    }
}

pub fn generate_workload(config: &WorkloadConfig) -> Result<TxStream> {
    config.validate()?;
    let mut rng = SimRng::derive(config.seed, "workload");
    let picker = WalletPicker {
        n: config.n_accounts as u64,
        hot: config.hot_accounts as u64,
        p_hot: config.hot_probability,
    };
    let mut now = 0u64;
    let mut txs = Vec::with_capacity(config.n_txs);
    for id in 0..config.n_txs as u64 {
        now += rng.exp_us(config.arrival_rate);
        let kind = OpKind::ALL[rng.weighted(&config.mix.weights)];
        let a = picker.pick(&mut rng);
        let mut wallets = vec![WalletId::account(a as usize)];
        if kind.wallet_arity() == 2 {
            wallets.push(WalletId::account(picker.pick_other(&mut rng, a) as usize));
        }
        let amount = if kind.has_amount() {
            rng.range(config.min_amount, config.max_amount)
        } else {
            0
        };
        let op = Operation::from_parts(kind, &wallets, amount)?;
        txs.push(Transaction::honest(id, now, op)?);
    }
    TxStream::new(txs)
}

/// Fraction of unordered transaction pairs that conflict.
pub fn contention_index(txs: &[Transaction]) -> Result<f64> {
    if txs.len() < 2 {
        return Err(Error::TooFewTransactions { needed: 2, got: txs.len() });
    }
    let n = txs.len() as u64;
    Ok(count_conflicting_pairs(txs) as f64 / (n * (n - 1) / 2) as f64)
}
