mod common;

use std::collections::VecDeque;

use proptest::prelude::*;
use sidestream::attack::qrsr;
use sidestream::engine::{OperatorKind, RingBuffer};
use sidestream::features::{cdf_sample, trim_slice, CdfFeaturizer, Featurizer};
use sidestream::observer::{TimingTrace, TraceMeta};

use common::*;

fn kind() -> impl Strategy<Value = OperatorKind> {
    prop::sample::select(WINDOWED.to_vec())
}

fn window() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=64).prop_flat_map(|w| (Just(w), 1..=w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn windows_match_oracle(kind in kind(), (w, s) in window(), keyed in any::<bool>(), seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let stream = random_stream(&mut rng, kind, 300, 4);
        let spec = spec_for(kind, w, s, keyed);
        prop_assert_eq!(run_operator(&spec, &stream), oracle(&spec, &stream));
    }

    #[test]
    fn ring_matches_deque(cap in 2usize..16, ops in prop::collection::vec(any::<bool>(), 0..2000)) {
        let (mut p, mut c) = RingBuffer::new::<u64>(cap).unwrap();
        let mut model = VecDeque::new();
        let mut next = 0u64;
        for push in ops {
            if push {
                let r = p.push(next);
                if model.len() == cap - 1 {
                    prop_assert!(r.is_err());
                } else {
                    prop_assert!(r.is_ok());
                    model.push_back(next);
                }
                next += 1;
            } else {
                prop_assert_eq!(c.pop(), model.pop_front());
            }
            prop_assert_eq!(c.len(), model.len());
            prop_assert_eq!(c.is_empty(), model.is_empty());
            prop_assert_eq!(p.is_full(), model.len() == cap - 1);
        }
    }

    #[test]
    fn trim_keeps_middle(n in 1usize..500, frac in 0.0f64..0.5) {
        let xs: Vec<usize> = (0..n).collect();
        match trim_slice(&xs, frac) {
            Ok(kept) => {
                let cut = (frac * n as f64).floor() as usize;
                prop_assert_eq!(kept, &xs[cut..n - cut]);
            }
            Err(_) => prop_assert!(2 * (frac * n as f64).floor() as usize >= n),
        }
    }

    #[test]
    fn cdf_is_sorted_and_bounded(d in prop::collection::vec(0u64..1_000_000, 1..300), k in 2usize..64) {
        let v = cdf_sample::<f64>(&d, k).unwrap();
        prop_assert_eq!(v.len(), k);
        prop_assert!(v.windows(2).all(|p| p[0] <= p[1]));
        prop_assert_eq!(v[0], *d.iter().min().unwrap() as f64);
        prop_assert_eq!(v[k - 1], *d.iter().max().unwrap() as f64);
    }

    #[test]
    fn featurizer_ignores_order(d in prop::collection::vec(0u64..10_000, 1..200).prop_shuffle()) {
        let f = CdfFeaturizer { k: 32, trim: 0.0, normalize: true };
        let mut sorted = d.clone();
        sorted.sort();
        let t = |d: Vec<u64>| TimingTrace::new(None, None, d, TraceMeta::default()).unwrap();
        let a: Vec<f64> = f.featurize(&t(d)).unwrap().values;
        let b: Vec<f64> = f.featurize(&t(sorted)).unwrap().values;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn qrsr_below_min(acc in prop::collection::vec(0.0f64..=1.0, 0..8)) {
        let q = qrsr(&acc);
        prop_assert!((0.0..=1.0).contains(&q));
        prop_assert!(acc.iter().all(|a| q <= *a));
        let mut with_one = acc.clone();
        with_one.push(1.0);
        prop_assert!((qrsr(&with_one) - q).abs() < 1e-12);
    }
}
