//! Byte-stable CSV and JSON rendering.

use std::fmt::Write as _;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::attack::DefenseReport;
use crate::engine::MetricsReport;
use crate::error::{Error, Result};

pub const COMPARE_HEADER: &str = "scheme,type,nodes,succ,fail,latency_s,tps,success_rate_pct";
pub const SWEEP_HEADER: &str = "knob_value,scheme,contention_index,succ,fail,mean_latency_s,tps";
pub const DEFENSE_HEADER: &str = "arm,scenario,scheme,attacker_txs,fake_committed,fake_rejected,fake_expired,\
fake_aborted,attacker_dispatched,fakes_in_blocks,honest_txs,honest_success_rate,honest_mean_latency_s,chain_forks,verdict";

pub const LATENCY_DECIMALS: usize = 4;
pub const RATE_DECIMALS: usize = 2;

/// Fixed-point with trailing zeros trimmed: `fixed(0.0100, 4) == "0.01"`.
pub fn fixed(value: f64, decimals: usize) -> String {
    let s = format!("{value:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".to_string()
    } else {
        s
    }
}

pub fn compare_row(r: &MetricsReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        r.scheme,
        r.mix,
        r.workers,
        r.succ,
        r.fail,
        fixed(r.mean_latency, LATENCY_DECIMALS),
        fixed(r.tps_committed, RATE_DECIMALS),
        fixed(r.success_rate * 100.0, RATE_DECIMALS),
    )
}

pub fn compare_csv(reports: &[MetricsReport]) -> String {
    table(COMPARE_HEADER, reports.iter().map(compare_row))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub knob_value: f64,
    pub contention_index: f64,
    pub report: MetricsReport,
}

pub fn sweep_row(row: &SweepRow) -> String {
    let r = &row.report;
    format!(
        "{},{},{},{},{},{},{}",
        fixed(row.knob_value, LATENCY_DECIMALS),
        r.scheme,
        fixed(row.contention_index, LATENCY_DECIMALS),
        r.succ,
        r.fail,
        fixed(r.mean_latency, LATENCY_DECIMALS),
        fixed(r.tps_committed, RATE_DECIMALS),
    )
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    table(SWEEP_HEADER, rows.iter().map(sweep_row))
}

pub fn defense_row(arm: &str, d: &DefenseReport) -> String {
    format!(
        "{arm},{},{},{},{},{},{},{},{},{},{},{},{},{},{:?}",
        d.scenario,
        d.scheme,
        d.attacker_txs,
        d.fake_committed,
        d.fake_rejected,
        d.fake_expired,
        d.fake_aborted,
        d.attacker_dispatched,
        d.fakes_in_blocks,
        d.honest_txs,
        fixed(d.honest_success_rate, LATENCY_DECIMALS),
        fixed(d.honest_mean_latency, LATENCY_DECIMALS),
        d.chain_forks,
        d.verdict,
    )
    .replace("Pass", "pass")
    .replace("Fail", "fail")
}

pub fn defense_csv(defended: &DefenseReport, undefended: &DefenseReport) -> String {
    table(
        DEFENSE_HEADER,
        [defense_row("defended", defended), defense_row("undefended", undefended)].into_iter(),
    )
}

fn table(header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{row}");
    }
    out
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Serialize(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Serialize(e.to_string()))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::ledger::StatusKind;

    fn fixture() -> MetricsReport {
        MetricsReport {
            scheme: "conchain".into(),
            mix: "R".into(),
            workers: 4,
            succ: 9974,
            fail: 26,
            fail_breakdown: BTreeMap::from([(StatusKind::AbortedInfrastructure, 26)]),
            mean_latency: 0.01,
            tps_committed: 132.5,
            success_rate: 0.9974,
            makespan: 75.3,
        }
    }

    #[test]
    fn table_row_fixture() {
        assert_eq!(compare_row(&fixture()), "conchain,R,4,9974,26,0.01,132.5,99.74");
    }

    #[test]
    fn fixed_point_trimming() {
        assert_eq!(fixed(0.0, 4), "0");
        assert_eq!(fixed(1.0, 2), "1");
        assert_eq!(fixed(0.123456, 4), "0.1235");
        assert_eq!(fixed(183.333, 2), "183.33");
        assert_eq!(fixed(-0.00001, 4), "0");
        assert_eq!(fixed(1500.0, 2), "1500");
    }

    #[test]
    fn compare_csv_has_header_and_rows() {
        let csv = compare_csv(&[fixture(), fixture()]);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], COMPARE_HEADER);
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn sweep_row_format() {
        let row = SweepRow {
            knob_value: 0.5,
            contention_index: 0.012345,
            report: fixture(),
        };
        assert_eq!(sweep_row(&row), "0.5,conchain,0.0123,9974,26,0.01,132.5");
    }

    #[test]
    fn json_round_trip() {
        let r = fixture();
        let back: MetricsReport = from_json(&to_json(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        let row = SweepRow {
            knob_value: 0.1 + 0.2,
            contention_index: 1.0 / 3.0,
            report: r,
        };
        let back: SweepRow = from_json(&to_json(&row).unwrap()).unwrap();
        assert_eq!(back, row);
    }
}
