//! Parametric per-record cost model for simulated timing.
//!
//! A record's cost is the boundary I/O cost (decrypt + encrypt, linear in
//! payload bytes) plus the cost of each operator invocation it triggered.
//! Stateless operators draw from a base distribution scaled by an
//! expression-specific factor; windowed operators pay a light per-event cost
//! and, on window completion, an extra `h0 + h1 * W`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ObserverError;
use crate::engine::{OperatorKind, OperatorSpec, Work};

/// Location/scale pair. A draw is `loc * factor + jitter * scale * z`, `z ~ N(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dist {
    pub loc: f64,
    pub scale: f64,
}

impl Dist {
    pub const fn new(loc: f64, scale: f64) -> Self {
        Dist { loc, scale }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterCost {
    pub pass: Dist,
    pub drop: Dist,
    /// Fraction of records that pass; only used by synthetic traces.
    pub selectivity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowCost {
    pub light: Dist,
    pub h0: f64,
    pub h1: f64,
}

impl WindowCost {
    pub fn heavy_extra(&self, window: usize) -> f64 {
        self.h0 + self.h1 * window as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Global noise multiplier; 0 makes every draw equal its location.
    pub jitter: f64,
    pub io_per_byte: f64,
    /// Payload size assumed by synthetic traces.
    pub payload_bytes: f64,
    /// Maximum relative cost deviation between alternative map/filter expressions.
    pub expr_spread: f64,
    pub map: Dist,
    pub filter: FilterCost,
    pub join: WindowCost,
    pub max: WindowCost,
    pub average: WindowCost,
    pub average_partition: WindowCost,
    pub count: WindowCost,
    pub reduce: WindowCost,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            jitter: 1.0,
            io_per_byte: 1.5,
            payload_bytes: 96.0,
            expr_spread: 0.06,
            map: Dist::new(1000.0, 60.0),
            filter: FilterCost { pass: Dist::new(1060.0, 55.0), drop: Dist::new(900.0, 50.0), selectivity: 0.5 },
            join: WindowCost { light: Dist::new(1500.0, 80.0), h0: 2500.0, h1: 60.0 },
            max: WindowCost { light: Dist::new(1200.0, 60.0), h0: 700.0, h1: 22.0 },
            average: WindowCost { light: Dist::new(1300.0, 60.0), h0: 900.0, h1: 30.0 },
            average_partition: WindowCost { light: Dist::new(1650.0, 70.0), h0: 1200.0, h1: 35.0 },
            count: WindowCost { light: Dist::new(1100.0, 50.0), h0: 400.0, h1: 12.0 },
            reduce: WindowCost { light: Dist::new(1300.0, 60.0), h0: 900.0, h1: 30.0 },
        }
    }
}

/// FNV-1a, used to derive stable per-expression cost factors.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, b| (h ^ *b as u64).wrapping_mul(0x100000001b3))
}

impl CostModel {
    pub fn validate(&self) -> Result<(), ObserverError> {
        let bad = |what: &str| Err(ObserverError::InvalidModel(what.to_owned()));
        let dists = [
            ("map", self.map),
            ("filter.pass", self.filter.pass),
            ("filter.drop", self.filter.drop),
        ];
        for (name, d) in dists {
            if !(d.loc > 0.0 && d.scale > 0.0) {
                return bad(name);
            }
        }
        for kind in OperatorKind::ALL.into_iter().filter(|k| k.is_windowed()) {
            let w = self.window_cost(kind).expect("windowed kind");
            if !(w.light.loc > 0.0 && w.light.scale > 0.0 && w.h0 > 0.0 && w.h1 > 0.0) {
                return bad(kind.name());
            }
        }
        if !(self.filter.selectivity > 0.0 && self.filter.selectivity < 1.0) {
            return bad("filter.selectivity");
        }
        if !(self.jitter >= 0.0 && self.io_per_byte >= 0.0 && self.payload_bytes >= 0.0) {
            return bad("jitter/io");
        }
        if !(0.0..1.0).contains(&self.expr_spread) {
            return bad("expr_spread");
        }
        Ok(())
    }

    pub fn window_cost(&self, kind: OperatorKind) -> Option<&WindowCost> {
        match kind {
            OperatorKind::Join => Some(&self.join),
            OperatorKind::Max => Some(&self.max),
            OperatorKind::Average => Some(&self.average),
            OperatorKind::AveragePartition => Some(&self.average_partition),
            OperatorKind::Count => Some(&self.count),
            OperatorKind::Reduce => Some(&self.reduce),
            OperatorKind::Map | OperatorKind::Filter => None,
        }
    }

    /// Deterministic factor in `[1 - spread, 1 + spread]` for a map or filter expression.
    pub fn expr_factor(&self, spec: &OperatorSpec) -> f64 {
        if spec.kind.is_windowed() || self.expr_spread == 0.0 {
            return 1.0;
        }
        let h = fnv1a(spec.expr_id.as_deref().unwrap_or("").as_bytes());
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        1.0 + self.expr_spread * (2.0 * u - 1.0)
    }

    pub fn io_cost(&self, payload_bytes: f64) -> f64 {
        self.io_per_byte * payload_bytes
    }

    fn draw<R: Rng + ?Sized>(&self, d: &Dist, factor: f64, rng: &mut R) -> f64 {
        let mut v = d.loc * factor;
        if self.jitter > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            v += self.jitter * d.scale * z;
        }
        v
    }

    /// Unrounded cost of one operator invocation.
    pub fn work_cost<R: Rng + ?Sized>(&self, spec: &OperatorSpec, work: Work, rng: &mut R) -> f64 {
        let factor = self.expr_factor(spec);
        match (spec.kind, work) {
            (OperatorKind::Filter, Work::FilterPass) => self.draw(&self.filter.pass, factor, rng),
            (OperatorKind::Filter, _) => self.draw(&self.filter.drop, factor, rng),
            (OperatorKind::Map, _) => self.draw(&self.map, factor, rng),
            (kind, work) => {
                let w = self.window_cost(kind).expect("windowed kind");
                let light = self.draw(&w.light, 1.0, rng);
                match work {
                    Work::Emit { window } => light + w.heavy_extra(window),
                    _ => light,
                }
            }
        }
    }

    /// Total cost of one record in whole cycles, at least 1.
    pub fn finish(total: f64) -> u64 {
        total.round().max(1.0) as u64
    }
}
