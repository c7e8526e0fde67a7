use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GeneratorError;

/// The only PRNG the generators use: ChaCha with 8 rounds, one stream per entity kind.
pub const PRNG_NAME: &str = "chacha8";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Counts {
    pub persons: usize,
    pub auctions: usize,
    pub bids: usize,
    pub flights: usize,
}

impl Default for Counts {
    fn default() -> Self {
        Counts { persons: 20_000, auctions: 60_000, bids: 920_000, flights: 100_000 }
    }
}

/// Inter-arrival model for event timestamps, in abstract ticks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RateProfile {
    Uniform { gap: u64 },
    /// `burst` events `inner` ticks apart, then a pause of `pause` ticks.
    Bursty { burst: usize, inner: u64, pause: u64 },
}

impl Default for RateProfile {
    fn default() -> Self {
        RateProfile::Uniform { gap: 10 }
    }
}

impl RateProfile {
    /// Timestamp of the `i`-th event.
    pub fn ts(&self, i: usize) -> u64 {
        match *self {
            RateProfile::Uniform { gap } => i as u64 * gap,
            RateProfile::Bursty { burst, inner, pause } => {
                let b = burst.max(1);
                let (k, j) = ((i / b) as u64, (i % b) as u64);
                k * ((b as u64 - 1) * inner + pause) + j * inner
            }
        }
    }
}

/// Inclusive ranges for generated numeric fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValueRanges {
    pub price: (i64, i64),
    pub initial_bid: (i64, i64),
    pub categories: i64,
    pub delay: (i64, i64),
    pub distance: (i64, i64),
    pub carriers: i64,
}

impl Default for ValueRanges {
    fn default() -> Self {
        ValueRanges {
            price: (1, 1_000),
            initial_bid: (1, 500),
            categories: 20,
            delay: (-60, 240),
            distance: (50, 5_000),
            carriers: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub prng: String,
    pub seed: u64,
    pub counts: Counts,
    pub rate: RateProfile,
    pub ranges: ValueRanges,
    /// Share of flights with a positive delay.
    pub fraction_delayed: f64,
    /// Share of flights with zero delay; the rest leave early.
    pub fraction_on_time: f64,
    /// When set, bids and auctions refer only to the `n` most recent
    /// auctions or persons at their position in the stream (hot items), which
    /// keeps windowed joins productive. Otherwise references are uniform.
    pub locality: Option<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            prng: PRNG_NAME.to_owned(),
            seed: 0,
            counts: Counts::default(),
            rate: RateProfile::default(),
            ranges: ValueRanges::default(),
            fraction_delayed: 0.4,
            fraction_on_time: 0.3,
            locality: None,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        let bad = |m: &str| Err(GeneratorError::InvalidConfig(m.to_owned()));
        if self.prng != PRNG_NAME {
            return bad("prng must be \"chacha8\"");
        }
        let f = (self.fraction_delayed, self.fraction_on_time);
        if !(0.0..=1.0).contains(&f.0) || !(0.0..=1.0).contains(&f.1) || f.0 + f.1 > 1.0 + 1e-12 {
            return bad("delay fractions must lie in [0,1] and sum to at most 1");
        }
        let r = &self.ranges;
        for (name, (lo, hi)) in [("price", r.price), ("initial_bid", r.initial_bid), ("delay", r.delay), ("distance", r.distance)] {
            if lo > hi {
                return bad(name);
            }
        }
        if r.delay.0 > -1 && f.0 + f.1 < 1.0 || r.delay.1 < 1 && f.0 > 0.0 {
            return bad("delay range cannot produce the requested early/late flights");
        }
        if self.locality == Some(0) {
            return bad("locality must be >= 1");
        }
        if r.categories < 1 || r.carriers < 1 {
            return bad("categories and carriers must be >= 1");
        }
        Ok(())
    }

    /// Independent generator for one entity kind.
    pub(crate) fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bursty_timestamps() {
        let r = RateProfile::Bursty { burst: 3, inner: 1, pause: 10 };
        let ts: Vec<u64> = (0..7).map(|i| r.ts(i)).collect();
        assert_eq!(ts, vec![0, 1, 2, 12, 13, 14, 24]);
    }

    #[test]
    fn config_json_roundtrip_and_defaults() {
        let c = GeneratorConfig::default();
        let back: GeneratorConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: GeneratorConfig = serde_json::from_str(r#"{"seed": 7}"#).unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.counts, Counts::default());
        c.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_prng() {
        let c = GeneratorConfig { prng: "mt19937".into(), ..GeneratorConfig::default() };
        assert!(c.validate().is_err());
    }
}
