//! CSV rows and a plain-text summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use crate::metrics::{mean, MetricsReport};

pub fn csv_bytes(reports: &[MetricsReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(r)?;
    }
    w.into_inner().context("flushing csv")
}

/// One line per (scenario, variant, f, subs) cell, averaged over seeds.
pub fn summary(reports: &[MetricsReport]) -> String {
    let mut cells: BTreeMap<(&str, &str, usize, usize), Vec<&MetricsReport>> = BTreeMap::new();
    for r in reports {
        cells
            .entry((&r.scenario, &r.variant, r.f, r.subs_per_subscriber))
            .or_default()
            .push(r);
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<21} {:<20} {:>2} {:>3} {:>5} {:>8} {:>7} {:>6} {:>10} {:>10} {:>9} {:>9} {:>10}",
        "scenario", "variant", "f", "k", "runs", "expected", "missing", "spur", "ev_ms", "sub_ms", "msgs", "filters", "match_ops"
    );
    for ((sc, var, f, k), rs) in cells {
        let avg = |g: &dyn Fn(&MetricsReport) -> f64| mean(&rs.iter().map(|r| g(r)).collect::<Vec<_>>());
        let _ = writeln!(
            out,
            "{:<21} {:<20} {:>2} {:>3} {:>5} {:>8} {:>7} {:>6} {:>10.1} {:>10.1} {:>9.0} {:>9.1} {:>10.0}",
            sc,
            var,
            f,
            k,
            rs.len(),
            rs.iter().map(|r| r.expected).sum::<usize>(),
            rs.iter().map(|r| r.missing).sum::<usize>(),
            rs.iter().map(|r| r.spurious).sum::<usize>(),
            avg(&|r| r.event_latency_mean_ms),
            avg(&|r| r.sub_latency_mean_ms),
            avg(&|r| r.messages_total as f64),
            avg(&|r| r.filters_peak as f64),
            avg(&|r| r.match_ops as f64),
        );
    }
    out
}

/// Writes `runs.csv` and `summary.txt` into `dir`, creating it.
pub fn emit(dir: &Path, reports: &[MetricsReport]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv = dir.join("runs.csv");
    fs::write(&csv, csv_bytes(reports)?).with_context(|| format!("writing {}", csv.display()))?;
    let sum = dir.join("summary.txt");
    fs::write(&sum, summary(reports)).with_context(|| format!("writing {}", sum.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_row_per_report_and_stable_header() {
        let rows = vec![MetricsReport::default(), MetricsReport { seed: 2, ..Default::default() }];
        let text = String::from_utf8(csv_bytes(&rows).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("scenario,variant,seed,nodes,f,"));
        assert_eq!(csv_bytes(&rows).unwrap(), text.as_bytes());
        assert_eq!(summary(&rows).lines().count(), 2);
    }
}
