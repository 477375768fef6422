use serde::Serialize;

/// One run, one CSV row. Column order is the field order.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub variant: String,
    pub seed: u64,
    pub nodes: usize,
    pub f: usize,
    pub subs_per_subscriber: usize,
    pub failed_nodes: usize,
    pub expected: usize,
    pub delivered: usize,
    pub missing: usize,
    pub spurious: usize,
    pub duplicates: usize,
    /// Correct deliveries to subscriptions younger than the settle period.
    pub excused: usize,
    pub event_latency_mean_ms: f64,
    pub event_latency_p50_ms: f64,
    pub event_latency_p95_ms: f64,
    pub event_latency_max_ms: f64,
    pub sub_latency_mean_ms: f64,
    pub sub_latency_p95_ms: f64,
    pub subs_settled: usize,
    pub max_hops: u32,
    pub messages_total: u64,
    pub msgs_subscribe: u64,
    pub msgs_subscribe_ack: u64,
    pub msgs_event: u64,
    pub msgs_event_ack: u64,
    pub msgs_backup_store: u64,
    pub msgs_backup_ack: u64,
    pub msgs_shortcut: u64,
    pub msgs_track_replicate: u64,
    pub msgs_handover: u64,
    pub msgs_board: u64,
    pub msgs_fd_subscribe: u64,
    pub msgs_fd_delegate: u64,
    pub msgs_fd_event: u64,
    pub dropped: u64,
    pub dead_target: u64,
    /// Largest network-wide count of stored filters (own tables plus backup
    /// copies; subscriber records and board entries for FastDelivery).
    pub filters_peak: usize,
    pub filters_mean: f64,
    pub match_ops: u64,
    pub trackers_started: usize,
    pub trackers_complete: usize,
    pub trackers_abandoned: usize,
    pub takeovers: usize,
    pub delivery_gaps: usize,
    pub helpers_recruited: usize,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Nearest-rank quantile of an unsorted sample.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Rounds to microsecond resolution so CSV text stays short and stable.
pub fn ms(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// `(max - min) / mean` of a set of cell means.
pub fn relative_spread(xs: &[f64]) -> f64 {
    let m = mean(xs);
    if xs.is_empty() || m == 0.0 {
        return 0.0;
    }
    let max = xs.iter().copied().fold(f64::MIN, f64::max);
    let min = xs.iter().copied().fold(f64::MAX, f64::min);
    (max - min) / m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let xs = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(quantile(&xs, 0.5), 3.0);
        assert_eq!(quantile(&xs, 1.0), 5.0);
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&[], 0.5), 0.0);
        assert_eq!(mean(&xs), 3.0);
        assert!((relative_spread(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-12);
    }
}
