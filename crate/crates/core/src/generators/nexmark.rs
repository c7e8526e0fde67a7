use rand::seq::SliceRandom;
use rand::Rng;

use super::{GeneratorConfig, GeneratorError};
use crate::engine::{EventRecord, Fields, SchemaId};

pub(crate) const STATES: &[&str] = &["AZ", "CA", "ID", "OR", "WA", "WY", "NV", "UT", "TX", "NY"];
pub(crate) const CITIES: &[&str] =
    &["Phoenix", "Los Angeles", "San Francisco", "Boise", "Portland", "Bend", "Seattle", "Kent", "Cheyenne", "Reno"];
const FIRST: &[&str] = &["Peter", "Paul", "Luke", "John", "Saul", "Vicky", "Kate", "Julie", "Sarah", "Deiter", "Walter"];
const LAST: &[&str] = &["Shultz", "Abrams", "Spencer", "White", "Bartels", "Walton", "Smith", "Jones", "Noris"];
const ITEMS: &[&str] = &["lamp", "chair", "clock", "vase", "rug", "desk", "mirror", "radio", "print", "kettle"];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NexmarkStreams {
    pub persons: Vec<EventRecord>,
    pub auctions: Vec<EventRecord>,
    pub bids: Vec<EventRecord>,
}

impl NexmarkStreams {
    /// Streams keyed by the source names the query catalog binds to.
    pub fn into_inputs(self) -> std::collections::BTreeMap<String, Vec<EventRecord>> {
        [("persons", self.persons), ("auctions", self.auctions), ("bids", self.bids)]
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v))
            .collect()
    }
}

/// An id in `0..n` referenced from position `i` of a stream of length `len`.
fn reference<R: Rng>(rng: &mut R, locality: Option<usize>, i: usize, len: usize, n: usize) -> i64 {
    match locality {
        None => rng.gen_range(0..n) as i64,
        Some(h) => {
            let cur = ((i as u128 * n as u128) / len as u128) as usize;
            rng.gen_range(cur.saturating_sub(h - 1)..=cur) as i64
        }
    }
}

fn range<R: Rng>(rng: &mut R, (lo, hi): (i64, i64)) -> i64 {
    rng.gen_range(lo..=hi)
}

/// Person, Auction and Bid streams. Sellers, bidders and bid targets always
/// refer to generated ids.
pub fn gen_nexmark(cfg: &GeneratorConfig) -> Result<NexmarkStreams, GeneratorError> {
    cfg.validate()?;
    let c = &cfg.counts;
    if c.persons == 0 || c.auctions == 0 || c.bids == 0 {
        return Err(GeneratorError::InvalidConfig("person, auction and bid counts must be > 0".into()));
    }
    let r = &cfg.ranges;

    let mut rng = cfg.rng(1);
    let persons = (0..c.persons)
        .map(|i| {
            let first = FIRST.choose(&mut rng).expect("non-empty");
            let last = LAST.choose(&mut rng).expect("non-empty");
            let k = rng.gen_range(0..STATES.len());
            let mut f = Fields::default();
            f.push("id", i as i64);
            f.push("name", format!("{first} {last}"));
            f.push("email", format!("{}{}@example.com", first.to_lowercase(), i));
            f.push("state", STATES[k]);
            f.push("city", CITIES[k]);
            EventRecord::new(SchemaId::Person, i as u64, cfg.rate.ts(i), f)
        })
        .collect();

    let mut rng = cfg.rng(2);
    let auctions = (0..c.auctions)
        .map(|i| {
            let ts = cfg.rate.ts(i);
            let mut f = Fields::default();
            f.push("id", i as i64);
            f.push("item", format!("{} {}", ITEMS.choose(&mut rng).expect("non-empty"), rng.gen_range(0..1000)));
            f.push("category", rng.gen_range(0..r.categories));
            f.push("seller", reference(&mut rng, cfg.locality, i, c.auctions, c.persons));
            f.push("initial_bid", range(&mut rng, r.initial_bid));
            f.push("expires", (ts + rng.gen_range(1_000..100_000)) as i64);
            EventRecord::new(SchemaId::Auction, i as u64, ts, f)
        })
        .collect();

    let mut rng = cfg.rng(3);
    let bids = (0..c.bids)
        .map(|i| {
            let ts = cfg.rate.ts(i);
            let mut f = Fields::default();
            f.push("auction", reference(&mut rng, cfg.locality, i, c.bids, c.auctions));
            f.push("bidder", rng.gen_range(0..c.persons) as i64);
            f.push("price", range(&mut rng, r.price));
            f.push("dt", ts as i64);
            EventRecord::new(SchemaId::Bid, i as u64, ts, f)
        })
        .collect();

    Ok(NexmarkStreams { persons, auctions, bids })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::engine::Value;
    use crate::generators::Counts;

    fn small(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            seed,
            counts: Counts { persons: 50, auctions: 120, bids: 2_000, flights: 0 },
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn counts_and_schemas() {
        let s = gen_nexmark(&small(1)).unwrap();
        assert_eq!((s.persons.len(), s.auctions.len(), s.bids.len()), (50, 120, 2_000));
        for rec in s.persons.iter().chain(&s.auctions).chain(&s.bids) {
            assert_eq!(rec.missing_field(), None);
        }
    }

    #[test]
    fn referential_integrity() {
        let s = gen_nexmark(&small(2)).unwrap();
        let auction_ids: HashSet<_> = s.auctions.iter().map(|a| a.get("id").cloned().unwrap().key()).collect();
        let person_ids: HashSet<_> = s.persons.iter().map(|p| p.get("id").cloned().unwrap().key()).collect();
        assert!(s.bids.iter().all(|b| auction_ids.contains(&b.get("auction").unwrap().key())));
        assert!(s.bids.iter().all(|b| person_ids.contains(&b.get("bidder").unwrap().key())));
        assert!(s.auctions.iter().all(|a| person_ids.contains(&a.get("seller").unwrap().key())));
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(gen_nexmark(&small(3)).unwrap(), gen_nexmark(&small(3)).unwrap());
        assert_ne!(gen_nexmark(&small(3)).unwrap().bids, gen_nexmark(&small(4)).unwrap().bids);
    }

    #[test]
    fn prices_in_range() {
        let s = gen_nexmark(&small(5)).unwrap();
        assert!(s.bids.iter().all(|b| matches!(b.get("price"), Some(Value::Int(p)) if (1..=1000).contains(p))));
    }

    #[test]
    fn locality_keeps_references_recent() {
        let mut c = small(6);
        c.counts = Counts { persons: 1_000, auctions: 1_000, bids: 1_000, flights: 0 };
        c.locality = Some(4);
        let s = gen_nexmark(&c).unwrap();
        for (i, b) in s.bids.iter().enumerate() {
            let Some(Value::Int(a)) = b.get("auction") else { panic!() };
            assert!((i as i64 - 3..=i as i64).contains(a));
        }
    }

    #[test]
    fn zero_counts_rejected() {
        let mut c = small(0);
        c.counts.bids = 0;
        assert!(gen_nexmark(&c).is_err());
    }
}
