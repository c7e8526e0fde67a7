use rand::seq::SliceRandom;
use rand::Rng;

use super::{GeneratorConfig, GeneratorError};
use crate::engine::{EventRecord, Fields, SchemaId};

const AIRPORTS: &[&str] = &["ATL", "ORD", "DFW", "DEN", "LAX", "SFO", "SEA", "JFK", "BOS", "PHX", "MIA", "LAS"];

/// Flight records. Each delay is positive with probability
/// `fraction_delayed`, zero with probability `fraction_on_time`, and negative
/// otherwise, uniform within the configured range on each side.
pub fn gen_flights(cfg: &GeneratorConfig) -> Result<Vec<EventRecord>, GeneratorError> {
    cfg.validate()?;
    let n = cfg.counts.flights;
    if n == 0 {
        return Err(GeneratorError::InvalidConfig("flight count must be > 0".into()));
    }
    let r = &cfg.ranges;
    let mut rng = cfg.rng(4);
    Ok((0..n)
        .map(|i| {
            let ts = cfg.rate.ts(i);
            let u: f64 = rng.gen();
            let delay = if u < cfg.fraction_delayed {
                rng.gen_range(1..=r.delay.1)
            } else if u < cfg.fraction_delayed + cfg.fraction_on_time {
                0
            } else {
                rng.gen_range(r.delay.0..=-1)
            };
            let origin = AIRPORTS.choose(&mut rng).expect("non-empty");
            let dest = loop {
                let d = AIRPORTS.choose(&mut rng).expect("non-empty");
                if d != origin {
                    break d;
                }
            };
            let mut f = Fields::default();
            f.push("carrier_id", rng.gen_range(0..r.carriers));
            f.push("origin", *origin);
            f.push("dest", *dest);
            f.push("dep_time", rng.gen_range(0..2400i64));
            f.push("delay", delay);
            f.push("distance", rng.gen_range(r.distance.0..=r.distance.1));
            EventRecord::new(SchemaId::Flight, i as u64, ts, f)
        })
        .collect())
}
