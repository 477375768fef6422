//! Cross-product sweeps and the trend checks run over their results.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Deserialize;

use crate::metrics::{mean, relative_spread, MetricsReport};
use crate::runner::run_scenario;
use crate::scenario::{Scenario, ScenarioError, ScenarioKind, Variant};

/// Sweep file. The `[scenario]` table starts from the preset named by its
/// `kind` and overrides individual fields.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    #[serde(default)]
    pub name: String,
    pub scenario: toml::Table,
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub f_values: Vec<usize>,
    #[serde(default)]
    pub subs_per_subscriber: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub assert: Assertions,
}

/// Assertions embedded in a sweep file. Unset means not checked.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Assertions {
    pub missing_zero: bool,
    pub spurious_zero: bool,
    /// Seed-level decreases allowed per adjacent pair of f values.
    pub sub_latency_nondecreasing_in_f: Option<usize>,
    pub event_spread_below_sub_spread: bool,
    pub memory_increases_with_f: bool,
    /// Bound on the relative spread of memory across subscription counts.
    pub memory_flat_in_subs: Option<f64>,
    pub mean_event_latency_ms: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub name: String,
    pub base: Scenario,
    pub variants: Vec<Variant>,
    pub f_values: Vec<usize>,
    pub subs_per_subscriber: Vec<usize>,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub assert: Assertions,
}

pub fn scenario_from_table(table: &toml::Table) -> Result<Scenario> {
    let kind = match table.get("kind") {
        Some(v) => v
            .as_str()
            .context("scenario.kind must be a string")?
            .parse::<ScenarioKind>()?,
        None => ScenarioKind::Normal,
    };
    let mut merged = toml::Table::try_from(Scenario::preset(kind))?;
    for (k, v) in table {
        merged.insert(k.clone(), v.clone());
    }
    let sc: Scenario = merged.try_into()?;
    sc.validate()?;
    Ok(sc)
}

impl SweepConfig {
    pub fn parse(text: &str) -> Result<SweepConfig> {
        let file: SweepFile = toml::from_str(text)?;
        let base = scenario_from_table(&file.scenario)?;
        if file.variants.is_empty() || file.seeds.is_empty() {
            bail!("variants and seeds must be nonempty");
        }
        let f_values = if file.f_values.is_empty() { vec![base.f] } else { file.f_values };
        let subs = if file.subs_per_subscriber.is_empty() {
            vec![base.subs_per_subscriber]
        } else {
            file.subs_per_subscriber
        };
        Ok(SweepConfig {
            name: file.name,
            base,
            variants: file.variants,
            f_values,
            subs_per_subscriber: subs,
            seeds: file.seeds,
            out: file.out,
            assert: file.assert,
        })
    }
}

/// Every (variant, f, k, seed) combination, validated up front, run in
/// parallel and returned in cross-product order.
pub fn replication_sweep(
    base: &Scenario,
    variants: &[Variant],
    f_values: &[usize],
    subs: &[usize],
    seeds: &[u64],
) -> Result<Vec<MetricsReport>, ScenarioError> {
    let mut jobs = Vec::new();
    for &v in variants {
        for &f in f_values {
            for &k in subs {
                let sc = Scenario {
                    f,
                    subs_per_subscriber: k,
                    ..base.clone()
                };
                sc.validate()?;
                for &seed in seeds {
                    jobs.push((sc.clone(), v, seed));
                }
            }
        }
    }
    jobs.into_par_iter()
        .map(|(sc, v, seed)| run_scenario(&sc, v, seed, false).map(|o| o.report))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Check {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

type CellKey = (String, usize, usize);

fn cells(reports: &[MetricsReport]) -> BTreeMap<CellKey, Vec<&MetricsReport>> {
    let mut out: BTreeMap<CellKey, Vec<&MetricsReport>> = BTreeMap::new();
    for r in reports {
        out.entry((r.variant.clone(), r.f, r.subs_per_subscriber))
            .or_default()
            .push(r);
    }
    out
}

fn cell_mean(rs: &[&MetricsReport], g: impl Fn(&MetricsReport) -> f64) -> f64 {
    mean(&rs.iter().map(|r| g(r)).collect::<Vec<_>>())
}

/// Groups cells by (variant, k), each group ordered by f.
fn by_f(reports: &[MetricsReport]) -> BTreeMap<(String, usize), Vec<(usize, Vec<&MetricsReport>)>> {
    let mut out: BTreeMap<(String, usize), Vec<(usize, Vec<&MetricsReport>)>> = BTreeMap::new();
    for ((v, f, k), rs) in cells(reports) {
        out.entry((v, k)).or_default().push((f, rs));
    }
    out
}

/// Cell means of subscription latency must not decrease with f; per seed,
/// at most `tolerance` decreases are allowed between adjacent f values.
pub fn sub_latency_nondecreasing(reports: &[MetricsReport], tolerance: usize) -> Check {
    let mut bad = Vec::new();
    for ((v, k), row) in by_f(reports) {
        for w in row.windows(2) {
            let (f0, a) = (&w[0].0, &w[0].1);
            let (f1, b) = (&w[1].0, &w[1].1);
            let ma = cell_mean(a, |r| r.sub_latency_mean_ms);
            let mb = cell_mean(b, |r| r.sub_latency_mean_ms);
            let by_seed: BTreeMap<u64, f64> = a.iter().map(|r| (r.seed, r.sub_latency_mean_ms)).collect();
            let violations = b
                .iter()
                .filter(|r| by_seed.get(&r.seed).is_some_and(|&x| r.sub_latency_mean_ms < x))
                .count();
            if mb < ma || violations > tolerance {
                bad.push(format!("{v} k={k} f{f0}->{f1}: {ma:.1}->{mb:.1}ms, {violations} seed decreases"));
            }
        }
    }
    Check::new("sub latency non-decreasing in f", bad.is_empty(), bad.join("; "))
}

/// Across f, event latency spreads less than subscription latency.
pub fn event_spread_below_sub_spread(reports: &[MetricsReport]) -> Check {
    let mut detail = Vec::new();
    let mut ok = true;
    for ((v, k), row) in by_f(reports) {
        let ev: Vec<f64> = row.iter().map(|(_, rs)| cell_mean(rs, |r| r.event_latency_mean_ms)).collect();
        let sub: Vec<f64> = row.iter().map(|(_, rs)| cell_mean(rs, |r| r.sub_latency_mean_ms)).collect();
        let (se, ss) = (relative_spread(&ev), relative_spread(&sub));
        ok &= se < ss;
        detail.push(format!("{v} k={k}: event {se:.3} sub {ss:.3}"));
    }
    Check::new("event latency spread below sub latency spread", ok, detail.join("; "))
}

/// Peak stored filters strictly increase with f.
pub fn memory_increases_with_f(reports: &[MetricsReport]) -> Check {
    let mut bad = Vec::new();
    for ((v, k), row) in by_f(reports) {
        let m: Vec<f64> = row.iter().map(|(_, rs)| cell_mean(rs, |r| r.filters_peak as f64)).collect();
        if m.windows(2).any(|w| w[1] <= w[0]) {
            bad.push(format!("{v} k={k}: {m:.1?}"));
        }
    }
    Check::new("memory increases with f", bad.is_empty(), bad.join("; "))
}

/// For each f, `(max - min) / mean` of peak stored filters across k is at most `bound`.
pub fn memory_flat_in_subs(reports: &[MetricsReport], bound: f64) -> Check {
    let mut rows: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for ((v, f, _), rs) in cells(reports) {
        rows.entry((v, f)).or_default().push(cell_mean(&rs, |r| r.filters_peak as f64));
    }
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for ((v, f), m) in rows {
        let s = relative_spread(&m);
        worst = worst.max(s);
        detail.push(format!("{v} f={f}: {s:.3}"));
    }
    Check::new("memory near-flat in subscriptions", worst <= bound, detail.join("; "))
}

pub fn evaluate(assert: &Assertions, reports: &[MetricsReport]) -> Vec<Check> {
    let mut out = Vec::new();
    if assert.missing_zero {
        let n: usize = reports.iter().map(|r| r.missing).sum();
        out.push(Check::new("missing = 0", n == 0, format!("{n} missing")));
    }
    if assert.spurious_zero {
        let n: usize = reports.iter().map(|r| r.spurious).sum();
        out.push(Check::new("spurious = 0", n == 0, format!("{n} spurious")));
    }
    if let Some(tol) = assert.sub_latency_nondecreasing_in_f {
        out.push(sub_latency_nondecreasing(reports, tol));
    }
    if assert.event_spread_below_sub_spread {
        out.push(event_spread_below_sub_spread(reports));
    }
    if assert.memory_increases_with_f {
        out.push(memory_increases_with_f(reports));
    }
    if let Some(b) = assert.memory_flat_in_subs {
        out.push(memory_flat_in_subs(reports, b));
    }
    if let Some([lo, hi]) = assert.mean_event_latency_ms {
        let m = mean(&reports.iter().map(|r| r.event_latency_mean_ms).collect::<Vec<_>>());
        out.push(Check::new(
            "mean event latency in range",
            (lo..=hi).contains(&m),
            format!("{m:.1}ms not in [{lo}, {hi}]"),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(f: usize, k: usize, seed: u64, sub: f64, ev: f64, mem: u32) -> MetricsReport {
        MetricsReport {
            variant: "v".into(),
            f,
            subs_per_subscriber: k,
            seed,
            sub_latency_mean_ms: sub,
            event_latency_mean_ms: ev,
            filters_peak: mem as usize,
            ..Default::default()
        }
    }

    #[test]
    fn trend_checks() {
        let rs = vec![
            row(1, 1, 1, 100.0, 200.0, 10),
            row(1, 1, 2, 110.0, 200.0, 10),
            row(2, 1, 1, 150.0, 205.0, 20),
            row(2, 1, 2, 105.0, 205.0, 20),
            row(1, 3, 1, 100.0, 200.0, 11),
            row(2, 3, 1, 160.0, 201.0, 21),
        ];
        assert!(sub_latency_nondecreasing(&rs, 1).passed);
        assert!(!sub_latency_nondecreasing(&rs, 0).passed);
        assert!(event_spread_below_sub_spread(&rs).passed);
        assert!(memory_increases_with_f(&rs).passed);
        assert!(memory_flat_in_subs(&rs, 0.25).passed);
        assert!(!memory_flat_in_subs(&rs, 0.01).passed);
    }

    #[test]
    fn sweep_file_overrides_preset() {
        let cfg = SweepConfig::parse(
            r#"
            variants = ["redirect-reliable"]
            f_values = [1, 2]
            seeds = [1]
            [scenario]
            kind = "replication-sweep"
            subscribers = 10
            "#,
        )
        .unwrap();
        assert_eq!(cfg.base.nodes, 75);
        assert_eq!(cfg.base.subscribers, 10);
        assert_eq!(cfg.subs_per_subscriber, vec![1]);
        assert!(SweepConfig::parse("variants=[]\nseeds=[1]\n[scenario]\n").is_err());
        assert!(SweepConfig::parse("variants=[\"fastdelivery\"]\nseeds=[1]\n[scenario]\nbogus=1\n").is_err());
    }
}
