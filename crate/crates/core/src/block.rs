//! Blocks and the hash-linked chain.
//!
//! Digest input layout, all integers big-endian:
//!
//! ```text
//! height          u64
//! parent_digest   u64
//! per tx:  id u64, status code u8
//! cut_time        u64 (microseconds)
//! ```
//!
//! Status codes: committed 0, aborted-conflict 1, aborted-insufficient-funds 2,
//! rejected-fake 3, expired 4, aborted-infrastructure 5.

use serde::{Deserialize, Serialize};

use crate::digest::Digester;
use crate::ledger::{TxId, TxStatus, Transaction};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub parent_digest: u64,
    pub txs: Vec<(TxId, TxStatus)>,
    pub cut_time_us: u64,
    pub digest: u64,
}

pub fn block_digest(height: u64, parent_digest: u64, txs: &[(TxId, TxStatus)], cut_time_us: u64) -> u64 {
    let mut d = Digester::new();
    d.update(&height.to_be_bytes());
    d.update(&parent_digest.to_be_bytes());
    for (id, status) in txs {
        d.update(&id.0.to_be_bytes());
        d.update(&[status.code()]);
    }
    d.update(&cut_time_us.to_be_bytes());
    d.finish()
}

impl Block {
    pub fn genesis() -> Self {
        Block {
            height: 0,
            parent_digest: 0,
            txs: Vec::new(),
            cut_time_us: 0,
            digest: block_digest(0, 0, &[], 0),
        }
    }

    pub fn recompute_digest(&self) -> u64 {
        block_digest(self.height, self.parent_digest, &self.txs, self.cut_time_us)
    }
}

/// Seals `txs` into the successor of `tail`.
pub fn cut_block(tail: &Block, txs: &[(&Transaction, TxStatus)], now_us: u64) -> Block {
    let entries: Vec<(TxId, TxStatus)> = txs.iter().map(|(t, s)| (t.id(), *s)).collect();
    seal(tail, entries, now_us)
}

pub(crate) fn seal(tail: &Block, txs: Vec<(TxId, TxStatus)>, now_us: u64) -> Block {
    let height = tail.height + 1;
    let digest = block_digest(height, tail.digest, &txs, now_us);
    Block {
        height,
        parent_digest: tail.digest,
        txs,
        cut_time_us: now_us,
        digest,
    }
}

/// Number of points where the chain does not extend its predecessor
/// (bad parent link, non-consecutive height or a stale digest).
pub fn count_forks(chain: &[Block]) -> usize {
    let mut forks = 0;
    for (i, b) in chain.iter().enumerate() {
        if b.digest != b.recompute_digest() {
            forks += 1;
            continue;
        }
        if i == 0 {
            if b.height != 0 {
                forks += 1;
            }
            continue;
        }
        let prev = &chain[i - 1];
        if b.height != prev.height + 1 || b.parent_digest != prev.digest {
            forks += 1;
        }
    }
    forks
}
