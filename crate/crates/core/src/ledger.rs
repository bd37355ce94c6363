//! SmallBank ledger: wallets, operations, transactions and serial semantics.
//!
//! | op                  | reads  | writes | effect                                             |
//! |---------------------|--------|--------|----------------------------------------------------|
//! | `Query(a)`          | a      | -      | none                                               |
//! | `DepositChecking`   | a      | a      | `a.checking += amount`                             |
//! | `TransactSavings`   | a      | a      | `a.savings += amount`                              |
//! | `SendPayment(a, b)` | a, b   | a, b   | move `amount` from `a.checking` to `b.checking`    |
//! | `WriteCheck(a)`     | a      | a      | `a.checking -= amount`, needs `checking+savings >= amount` |
//! | `Amalgamate(a, b)`  | a, b   | a, b   | move all of `a` into `b.checking`                  |
//!
//! A committed write bumps the wallet version by one. Aborts leave state untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minor currency units.
pub type Money = u64;

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct WalletId(Arc<str>);

impl WalletId {
    pub fn new(id: impl AsRef<str>) -> Result<Self> {
        let id = id.as_ref();
        if id.is_empty() {
            return Err(Error::InvalidOperation("empty wallet id".into()));
        }
        Ok(WalletId(Arc::from(id)))
    }

    /// Canonical name of the `index`-th generated account.
    pub fn account(index: usize) -> Self {
        WalletId(Arc::from(format!("acct{index:06}")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for WalletId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        WalletId::new(s)
    }
}

impl From<WalletId> for String {
    fn from(w: WalletId) -> String {
        w.0.to_string()
    }
}

impl fmt::Debug for WalletId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for WalletId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TxId(pub u64);

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Query,
    DepositChecking,
    TransactSavings,
    SendPayment,
    WriteCheck,
    Amalgamate,
}

impl OpKind {
    pub const ALL: [OpKind; 6] = [
        OpKind::Query,
        OpKind::DepositChecking,
        OpKind::TransactSavings,
        OpKind::SendPayment,
        OpKind::WriteCheck,
        OpKind::Amalgamate,
    ];

    pub fn token(self) -> &'static str {
        match self {
            OpKind::Query => "query",
            OpKind::DepositChecking => "deposit_checking",
            OpKind::TransactSavings => "transact_savings",
            OpKind::SendPayment => "send_payment",
            OpKind::WriteCheck => "write_check",
            OpKind::Amalgamate => "amalgamate",
        }
    }

    pub fn index(self) -> usize {
        OpKind::ALL.iter().position(|k| *k == self).unwrap()
    }

    pub fn wallet_arity(self) -> usize {
        match self {
            OpKind::SendPayment | OpKind::Amalgamate => 2,
            _ => 1,
        }
    }

    pub fn has_amount(self) -> bool {
        !matches!(self, OpKind::Query | OpKind::Amalgamate)
    }
}

impl FromStr for OpKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| Error::InvalidOperation(format!("unknown op kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Query(WalletId),
    DepositChecking(WalletId, Money),
    TransactSavings(WalletId, Money),
    SendPayment(WalletId, WalletId, Money),
    WriteCheck(WalletId, Money),
    Amalgamate(WalletId, WalletId),
}

impl Operation {
    pub fn kind(&self) -> OpKind {
        match self {
            Operation::Query(..) => OpKind::Query,
            Operation::DepositChecking(..) => OpKind::DepositChecking,
            Operation::TransactSavings(..) => OpKind::TransactSavings,
            Operation::SendPayment(..) => OpKind::SendPayment,
            Operation::WriteCheck(..) => OpKind::WriteCheck,
            Operation::Amalgamate(..) => OpKind::Amalgamate,
        }
    }

    pub fn wallets(&self) -> Vec<&WalletId> {
        match self {
            Operation::Query(a)
            | Operation::DepositChecking(a, _)
            | Operation::TransactSavings(a, _)
            | Operation::WriteCheck(a, _) => vec![a],
            Operation::SendPayment(a, b, _) | Operation::Amalgamate(a, b) => vec![a, b],
        }
    }

    pub fn amount(&self) -> Money {
        match self {
            Operation::Query(_) | Operation::Amalgamate(..) => 0,
            Operation::DepositChecking(_, m)
            | Operation::TransactSavings(_, m)
            | Operation::SendPayment(_, _, m)
            | Operation::WriteCheck(_, m) => *m,
        }
    }

    /// Builds an operation from its kind and flat arguments.
    pub fn from_parts(kind: OpKind, wallets: &[WalletId], amount: Money) -> Result<Self> {
        if wallets.len() != kind.wallet_arity() {
            return Err(Error::InvalidOperation(format!(
                "{} takes {} wallet(s), got {}",
                kind.token(),
                kind.wallet_arity(),
                wallets.len()
            )));
        }
        let a = wallets[0].clone();
        let op = match kind {
            OpKind::Query => Operation::Query(a),
            OpKind::DepositChecking => Operation::DepositChecking(a, amount),
            OpKind::TransactSavings => Operation::TransactSavings(a, amount),
            OpKind::WriteCheck => Operation::WriteCheck(a, amount),
            OpKind::SendPayment => Operation::SendPayment(a, wallets[1].clone(), amount),
            OpKind::Amalgamate => Operation::Amalgamate(a, wallets[1].clone()),
        };
        op.validate()?;
        Ok(op)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Operation::SendPayment(a, b, _) | Operation::Amalgamate(a, b) if a == b => Err(
                Error::InvalidOperation(format!("{} needs two distinct wallets, got {a} twice", self.kind().token())),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RwSets {
    pub reads: BTreeSet<WalletId>,
    pub writes: BTreeSet<WalletId>,
}

impl RwSets {
    pub fn touched(&self) -> impl Iterator<Item = &WalletId> {
        self.reads.union(&self.writes)
    }
}

/// Read and write wallet sets of `op` under the serial semantics.
pub fn extract_rw_sets(op: &Operation) -> Result<RwSets> {
    op.validate()?;
    let reads: BTreeSet<WalletId> = op.wallets().into_iter().cloned().collect();
    let writes = match op {
        Operation::Query(_) => BTreeSet::new(),
        _ => reads.clone(),
    };
    assert!(writes.is_subset(&reads), "blind write in {op:?}");
    Ok(RwSets { reads, writes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxType {
    Read,
    ReadWrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    DoubleSpend,
    BlockWithholding,
    Balance,
    #[serde(rename = "ddos")]
    DDoS,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::DoubleSpend,
        Scenario::BlockWithholding,
        Scenario::Balance,
        Scenario::DDoS,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Scenario::DoubleSpend => "double_spend",
            Scenario::BlockWithholding => "block_withholding",
            Scenario::Balance => "balance",
            Scenario::DDoS => "ddos",
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| Error::config("attack.scenario", format!("unknown scenario `{s}`")))
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Role of an attacker-submitted transaction.
///
/// `Fake` transactions are ones screening must stop. `Cover` is the
/// legitimate half of a double-spend pair and `Flood` is valid but
/// adversarial load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackRole {
    Fake,
    Cover,
    Flood,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Honest,
    Attacker { scenario: Scenario, role: AttackRole },
}

impl Origin {
    pub fn is_attacker(&self) -> bool {
        matches!(self, Origin::Attacker { .. })
    }

    pub fn is_fake(&self) -> bool {
        matches!(self, Origin::Attacker { role: AttackRole::Fake, .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    id: TxId,
    submit_us: u64,
    tx_type: TxType,
    op: Operation,
    rw: RwSets,
    origin: Origin,
}

impl Transaction {
    pub fn new(id: u64, submit_us: u64, op: Operation, origin: Origin) -> Result<Self> {
        let rw = extract_rw_sets(&op)?;
        let tx_type = if rw.writes.is_empty() {
            TxType::Read
        } else {
            TxType::ReadWrite
        };
        Ok(Transaction {
            id: TxId(id),
            submit_us,
            tx_type,
            op,
            rw,
            origin,
        })
    }

    pub fn honest(id: u64, submit_us: u64, op: Operation) -> Result<Self> {
        Self::new(id, submit_us, op, Origin::Honest)
    }

    pub fn id(&self) -> TxId {
        self.id
    }
    pub fn submit_us(&self) -> u64 {
        self.submit_us
    }
    pub fn tx_type(&self) -> TxType {
        self.tx_type
    }
    pub fn op(&self) -> &Operation {
        &self.op
    }
    pub fn rw(&self) -> &RwSets {
        &self.rw
    }
    pub fn origin(&self) -> Origin {
        self.origin
    }

    /// Copy with a new id and submit time, used when merging streams.
    pub fn relabeled(&self, id: u64, submit_us: u64) -> Self {
        Transaction {
            id: TxId(id),
            submit_us,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FakeReason {
    UnknownWallet,
    DuplicateId,
    OverCommitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxStatus {
    Committed,
    AbortedConflict,
    AbortedInsufficientFunds,
    RejectedFake(FakeReason),
    Expired,
    /// Otherwise-committed transaction dropped by injected infrastructure noise.
    AbortedInfrastructure,
}

/// Status without payload, used as a breakdown key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusKind {
    Committed,
    AbortedConflict,
    AbortedInsufficientFunds,
    RejectedFake,
    Expired,
    AbortedInfrastructure,
}

impl TxStatus {
    pub fn kind(self) -> StatusKind {
        match self {
            TxStatus::Committed => StatusKind::Committed,
            TxStatus::AbortedConflict => StatusKind::AbortedConflict,
            TxStatus::AbortedInsufficientFunds => StatusKind::AbortedInsufficientFunds,
            TxStatus::RejectedFake(_) => StatusKind::RejectedFake,
            TxStatus::Expired => StatusKind::Expired,
            TxStatus::AbortedInfrastructure => StatusKind::AbortedInfrastructure,
        }
    }

    /// Byte used in block digests.
    pub fn code(self) -> u8 {
        match self.kind() {
            StatusKind::Committed => 0,
            StatusKind::AbortedConflict => 1,
            StatusKind::AbortedInsufficientFunds => 2,
            StatusKind::RejectedFake => 3,
            StatusKind::Expired => 4,
            StatusKind::AbortedInfrastructure => 5,
        }
    }

    pub fn is_committed(self) -> bool {
        self == TxStatus::Committed
    }
}

impl fmt::Display for TxStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Account {
    pub checking: Money,
    pub savings: Money,
    pub version: u64,
}

impl Account {
    pub fn funded(checking: Money, savings: Money) -> Self {
        Account {
            checking,
            savings,
            version: 0,
        }
    }

    pub fn total(&self) -> Money {
        self.checking + self.savings
    }
}

/// Wallet → version, captured at dispatch.
pub type VersionSnapshot = BTreeMap<WalletId, u64>;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedgerState {
    pub accounts: BTreeMap<WalletId, Account>,
    pub height: u64,
}

/// Balance access used by the serial executor.
///
/// Separated out so tests can observe exactly which wallets an operation
/// touches.
pub trait AccountStore {
    fn read(&mut self, wallet: &WalletId) -> Account;
    fn write(&mut self, wallet: &WalletId, account: Account);
}

impl AccountStore for LedgerState {
    fn read(&mut self, wallet: &WalletId) -> Account {
        self.accounts
            .get(wallet)
            .copied()
            .unwrap_or_else(|| panic!("wallet {wallet} missing from ledger"))
    }

    fn write(&mut self, wallet: &WalletId, account: Account) {
        self.accounts.insert(wallet.clone(), account);
    }
}

/// Runs `op` against `store`. Returns the abort status on failure, in which
/// case nothing has been written.
pub fn execute<S: AccountStore>(store: &mut S, op: &Operation) -> Result<(), TxStatus> {
    let insufficient = Err(TxStatus::AbortedInsufficientFunds);
    match op {
        Operation::Query(a) => {
            store.read(a);
        }
        Operation::DepositChecking(a, amount) => {
            let mut acct = store.read(a);
            acct.checking += amount;
            store.write(a, acct);
        }
        Operation::TransactSavings(a, amount) => {
            let mut acct = store.read(a);
            acct.savings += amount;
            store.write(a, acct);
        }
        Operation::SendPayment(a, b, amount) => {
            let mut from = store.read(a);
            let mut to = store.read(b);
            if from.checking < *amount {
                return insufficient;
            }
            from.checking -= amount;
            to.checking += amount;
            store.write(a, from);
            store.write(b, to);
        }
        Operation::WriteCheck(a, amount) => {
            let mut acct = store.read(a);
            if acct.total() < *amount {
                return insufficient;
            }
            // Draw from checking first, the rest from savings.
            let from_checking = acct.checking.min(*amount);
            acct.checking -= from_checking;
            acct.savings -= amount - from_checking;
            store.write(a, acct);
        }
        Operation::Amalgamate(a, b) => {
            let mut from = store.read(a);
            let mut to = store.read(b);
            to.checking += from.total();
            from.checking = 0;
            from.savings = 0;
            store.write(a, from);
            store.write(b, to);
        }
    }
    Ok(())
}

impl LedgerState {
    /// `n` accounts named by [`WalletId::account`], all with the same balances.
    pub fn with_accounts(n: usize, checking: Money, savings: Money) -> Self {
        let accounts = (0..n)
            .map(|i| (WalletId::account(i), Account::funded(checking, savings)))
            .collect();
        LedgerState {
            accounts,
            height: 0,
        }
    }

    pub fn contains(&self, wallet: &WalletId) -> bool {
        self.accounts.contains_key(wallet)
    }

    pub fn account(&self, wallet: &WalletId) -> Option<&Account> {
        self.accounts.get(wallet)
    }

    /// Creates `wallet` with zero balances if absent.
    pub fn ensure_account(&mut self, wallet: &WalletId) {
        self.accounts.entry(wallet.clone()).or_default();
    }

    pub fn total_money(&self) -> u128 {
        self.accounts.values().map(|a| u128::from(a.total())).sum()
    }

    /// In-place form of [`apply_tx`].
    pub fn apply(&mut self, tx: &Transaction) -> TxStatus {
        match execute(self, tx.op()) {
            Ok(()) => {
                for w in &tx.rw().writes {
                    let acct = self.accounts.get_mut(w).expect("written wallet exists");
                    acct.version += 1;
                }
                TxStatus::Committed
            }
            Err(status) => status,
        }
    }

    pub fn snapshot_versions<'a>(
        &self,
        reads: impl IntoIterator<Item = &'a WalletId>,
    ) -> Result<VersionSnapshot> {
        reads
            .into_iter()
            .map(|w| {
                self.accounts
                    .get(w)
                    .map(|a| (w.clone(), a.version))
                    .ok_or_else(|| Error::UnknownWallet(w.clone()))
            })
            .collect()
    }
}

/// Applies `tx` to a copy of `state`.
pub fn apply_tx(state: &LedgerState, tx: &Transaction) -> (LedgerState, TxStatus) {
    let mut next = state.clone();
    let status = next.apply(tx);
    if status.is_committed() {
        (next, status)
    } else {
        (state.clone(), status)
    }
}

pub fn snapshot_versions(state: &LedgerState, reads: &BTreeSet<WalletId>) -> Result<VersionSnapshot> {
    state.snapshot_versions(reads)
}

/// True iff no wallet in `snapshot` has changed version since capture.
pub fn occ_validate(snapshot: &VersionSnapshot, state: &LedgerState) -> bool {
    snapshot
        .iter()
        .all(|(w, v)| state.accounts.get(w).map(|a| a.version) == Some(*v))
}
