use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SimTime;
use crate::overlay::Region;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("no regions configured")]
    NoRegions,
    #[error("latency matrix is {rows}x{cols}, expected {n}x{n}")]
    MatrixShape { rows: usize, cols: usize, n: usize },
    #[error("latency {from}->{to} is not symmetric")]
    Asymmetric { from: String, to: String },
    #[error("latency {from}->{to} must satisfy 0 < min <= max")]
    BadBounds { from: String, to: String },
    #[error("drop probability {0} outside [0, 1]")]
    DropProbability(f64),
}

/// One-way latency bounds in milliseconds; samples are uniform in `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyBounds {
    pub min_ms: f64,
    pub max_ms: f64,
}

impl LatencyBounds {
    pub const fn new(min_ms: f64, max_ms: f64) -> Self {
        LatencyBounds { min_ms, max_ms }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SimTime {
        let lo = SimTime::from_millis_f64(self.min_ms).as_micros();
        let hi = SimTime::from_millis_f64(self.max_ms).as_micros();
        SimTime::from_micros(rng.gen_range(lo..=hi))
    }
}

/// Per-node processing cost. A node handles one event at a time; later
/// arrivals queue behind it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceModel {
    /// Fixed cost of handling any message, timer or command.
    pub per_message_us: u64,
    /// Extra cost per filter comparison reported by the handler.
    pub per_match_us: u64,
}

impl Default for ServiceModel {
    fn default() -> Self {
        ServiceModel {
            per_message_us: 3500,
            per_match_us: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionAssignment {
    /// Node `i` lands in region `i mod regions`.
    #[default]
    RoundRobin,
    /// Uniform draw from the seeded RNG.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub regions: Vec<String>,
    /// `latency[a][b]` bounds messages from region `a` to region `b`.
    pub latency: Vec<Vec<LatencyBounds>>,
    pub node_count: usize,
    pub region_assignment: RegionAssignment,
    pub drop_probability: f64,
    pub service: ServiceModel,
}

impl Default for SimConfig {
    /// Four regions. Intra-region links are 5-15 ms; inter-region links are
    /// set so a 60-node network lands near a quarter second of end-to-end
    /// event latency.
    fn default() -> Self {
        let regions = ["eu", "na", "asia", "sa"];
        let inter = |a: usize, b: usize| -> LatencyBounds {
            match (a.min(b), a.max(b)) {
                (0, 1) => LatencyBounds::new(40.0, 70.0),
                (0, 2) => LatencyBounds::new(80.0, 120.0),
                (0, 3) => LatencyBounds::new(90.0, 130.0),
                (1, 2) => LatencyBounds::new(70.0, 110.0),
                (1, 3) => LatencyBounds::new(60.0, 90.0),
                (2, 3) => LatencyBounds::new(120.0, 160.0),
                _ => LatencyBounds::new(5.0, 15.0),
            }
        };
        let latency = (0..regions.len())
            .map(|a| (0..regions.len()).map(|b| inter(a, b)).collect())
            .collect();
        SimConfig {
            seed: 1,
            regions: regions.iter().map(|s| s.to_string()).collect(),
            latency,
            node_count: 60,
            region_assignment: RegionAssignment::RoundRobin,
            drop_probability: 0.0,
            service: ServiceModel::default(),
        }
    }
}

impl SimConfig {
    /// Single-region network with uniform latency, handy in tests.
    pub fn uniform(seed: u64, min_ms: f64, max_ms: f64) -> Self {
        SimConfig {
            seed,
            regions: vec!["local".into()],
            latency: vec![vec![LatencyBounds::new(min_ms, max_ms)]],
            node_count: 0,
            region_assignment: RegionAssignment::RoundRobin,
            drop_probability: 0.0,
            service: ServiceModel::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.regions.len();
        if n == 0 {
            return Err(ConfigError::NoRegions);
        }
        if self.latency.len() != n || self.latency.iter().any(|r| r.len() != n) {
            return Err(ConfigError::MatrixShape {
                rows: self.latency.len(),
                cols: self.latency.first().map_or(0, Vec::len),
                n,
            });
        }
        for a in 0..n {
            for b in 0..n {
                let l = self.latency[a][b];
                let names = || (self.regions[a].clone(), self.regions[b].clone());
                if !(l.min_ms > 0.0 && l.min_ms <= l.max_ms && l.max_ms.is_finite()) {
                    let (from, to) = names();
                    return Err(ConfigError::BadBounds { from, to });
                }
                if l != self.latency[b][a] {
                    let (from, to) = names();
                    return Err(ConfigError::Asymmetric { from, to });
                }
            }
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(ConfigError::DropProbability(self.drop_probability));
        }
        Ok(())
    }

    pub fn bounds(&self, from: Region, to: Region) -> LatencyBounds {
        self.latency[from.0 as usize][to.0 as usize]
    }

    pub fn region_of<R: Rng + ?Sized>(&self, index: usize, rng: &mut R) -> Region {
        let n = self.regions.len().max(1);
        match self.region_assignment {
            RegionAssignment::RoundRobin => Region((index % n) as u16),
            RegionAssignment::Random => Region(rng.gen_range(0..n) as u16),
        }
    }

    pub fn region_named(&self, name: &str) -> Option<Region> {
        self.regions.iter().position(|r| r == name).map(|i| Region(i as u16))
    }

    /// Largest configured one-way latency.
    pub fn max_latency(&self) -> SimTime {
        let max = self
            .latency
            .iter()
            .flatten()
            .map(|l| l.max_ms)
            .fold(0.0, f64::max);
        SimTime::from_millis_f64(max)
    }

    /// 99th percentile of the one-way latency between two nodes whose
    /// regions are drawn uniformly and independently.
    pub fn latency_quantile(&self, q: f64) -> SimTime {
        let pairs: Vec<LatencyBounds> = self.latency.iter().flatten().copied().collect();
        if pairs.is_empty() {
            return SimTime::ZERO;
        }
        let cdf = |x: f64| -> f64 {
            pairs
                .iter()
                .map(|l| {
                    if x <= l.min_ms {
                        0.0
                    } else if x >= l.max_ms {
                        1.0
                    } else {
                        (x - l.min_ms) / (l.max_ms - l.min_ms)
                    }
                })
                .sum::<f64>()
                / pairs.len() as f64
        };
        let (mut lo, mut hi) = (0.0, self.max_latency().as_millis_f64());
        for _ in 0..60 {
            let mid = (lo + hi) / 2.0;
            if cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        SimTime::from_millis_f64(hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn default_is_valid() {
        SimConfig::default().validate().unwrap();
        SimConfig::uniform(1, 5.0, 15.0).validate().unwrap();
    }

    #[test]
    fn validation_errors() {
        let mut c = SimConfig::default();
        c.latency[0][1] = LatencyBounds::new(1.0, 2.0);
        assert!(matches!(c.validate(), Err(ConfigError::Asymmetric { .. })));
        let mut c = SimConfig::uniform(1, 5.0, 15.0);
        c.latency[0][0] = LatencyBounds::new(0.0, 1.0);
        assert!(matches!(c.validate(), Err(ConfigError::BadBounds { .. })));
        c.latency[0][0] = LatencyBounds::new(3.0, 1.0);
        assert!(matches!(c.validate(), Err(ConfigError::BadBounds { .. })));
        let mut c = SimConfig::uniform(1, 5.0, 15.0);
        c.drop_probability = 1.5;
        assert!(c.validate().is_err());
        c.regions.clear();
        assert_eq!(c.validate(), Err(ConfigError::NoRegions));
    }

    #[test]
    fn samples_stay_in_bounds() {
        let b = LatencyBounds::new(5.0, 15.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<_> = (0..5000).map(|_| b.sample(&mut rng)).collect();
        assert!(samples
            .iter()
            .all(|s| (5_000..=15_000).contains(&s.as_micros())));
        let mean = samples.iter().map(|s| s.as_micros() as f64).sum::<f64>() / 5000.0;
        assert!((mean - 10_000.0).abs() < 200.0);
    }

    #[test]
    fn quantile_of_uniform() {
        let c = SimConfig::uniform(1, 10.0, 20.0);
        let p99 = c.latency_quantile(0.99).as_millis_f64();
        assert!((p99 - 19.9).abs() < 0.01, "{p99}");
        let d = SimConfig::default();
        assert!(d.latency_quantile(0.99) <= d.max_latency());
    }
}
