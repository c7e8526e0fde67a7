use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::GeneratorError;
use crate::engine::{OperatorKind, OperatorSpec, PipelineSpec, SourceBinding, StageSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueryId {
    Q1,
    Q2,
    Q3,
    Q4,
    Q5,
    Q6,
    SecureStream,
}

impl QueryId {
    pub const NEXMARK: [QueryId; 6] = [QueryId::Q1, QueryId::Q2, QueryId::Q3, QueryId::Q4, QueryId::Q5, QueryId::Q6];

    pub fn name(self) -> &'static str {
        match self {
            QueryId::Q1 => "Q1",
            QueryId::Q2 => "Q2",
            QueryId::Q3 => "Q3",
            QueryId::Q4 => "Q4",
            QueryId::Q5 => "Q5",
            QueryId::Q6 => "Q6",
            QueryId::SecureStream => "SecureStream",
        }
    }
}

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QueryId {
    type Err = GeneratorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let all = QueryId::NEXMARK.into_iter().chain([QueryId::SecureStream]);
        all.into_iter()
            .find(|q| q.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| GeneratorError::UnknownQuery(s.to_owned()))
    }
}

/// Knobs the catalog exposes. Window parameters apply to every windowed
/// stage of a query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CatalogParams {
    /// Dollar to euro rate used by Q1.
    pub rate: f64,
    pub window: usize,
    pub slide: usize,
}

impl Default for CatalogParams {
    fn default() -> Self {
        CatalogParams { rate: 0.9, window: 16, slide: 4 }
    }
}

pub fn catalog_query(id: QueryId) -> PipelineSpec {
    catalog_query_with(id, &CatalogParams::default())
}

fn src(stream: &str, stage: usize) -> SourceBinding {
    SourceBinding { stream: stream.to_owned(), stage }
}

fn stages(ops: Vec<OperatorSpec>) -> Vec<StageSpec> {
    ops.into_iter().enumerate().map(|(i, op)| StageSpec::new(i, op)).collect()
}

/// Stream sources are named `persons`, `auctions`, `bids` and `flights`.
pub fn catalog_query_with(id: QueryId, p: &CatalogParams) -> PipelineSpec {
    use OperatorKind::*;
    let win = |kind, field: Option<&str>| OperatorSpec::windowed(kind, field, p.window, p.slide);
    match id {
        // Bid prices from dollars to euros.
        QueryId::Q1 => PipelineSpec::single(OperatorSpec::map(&format!("scale(price,{})", p.rate)), &["bids"]),
        // Bids above a price, projected.
        QueryId::Q2 => PipelineSpec {
            stages: stages(vec![OperatorSpec::filter("gt(price,500)"), OperatorSpec::map("project(auction,price)")]),
            edges: vec![[0, 1]],
            sources: vec![src("bids", 0)],
            sinks: vec![1],
        },
        // Sellers in a state joined with their auctions in a category range.
        QueryId::Q3 => PipelineSpec {
            stages: stages(vec![
                OperatorSpec::filter("ne(state,'NY')"),
                OperatorSpec::filter("lt(category,15)"),
                win(Join, None).with_key("seller=id"),
                OperatorSpec::map("project(name,city,state,id)"),
            ]),
            edges: vec![[1, 2], [0, 2], [2, 3]],
            sources: vec![src("persons", 0), src("auctions", 1)],
            sinks: vec![3],
        },
        // Highest bid per auction window, then its running average.
        QueryId::Q4 => PipelineSpec {
            stages: stages(vec![win(Join, None).with_key("id=auction"), win(Max, Some("price")), win(Average, Some("price"))]),
            edges: vec![[0, 1], [1, 2]],
            sources: vec![src("auctions", 0), src("bids", 0)],
            sinks: vec![2],
        },
        // Bids per window.
        QueryId::Q5 => PipelineSpec::single(win(Count, None), &["bids"]),
        // Average winning price per seller.
        QueryId::Q6 => PipelineSpec {
            stages: stages(vec![
                win(Join, None).with_key("id=auction"),
                OperatorSpec::filter("ge(price,100)"),
                win(Max, Some("price")),
                win(AveragePartition, Some("price")).with_key("seller"),
            ]),
            edges: vec![[0, 1], [1, 2], [2, 3]],
            sources: vec![src("auctions", 0), src("bids", 0)],
            sinks: vec![3],
        },
        // Delayed flights and their windowed average delay.
        QueryId::SecureStream => PipelineSpec {
            stages: stages(vec![
                OperatorSpec::map("project(carrier_id,delay)"),
                OperatorSpec::filter("gt(delay,0)"),
                win(Reduce, Some("delay")),
            ]),
            edges: vec![[0, 1], [1, 2]],
            sources: vec![src("flights", 0)],
            sinks: vec![2],
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(id: QueryId) -> Vec<OperatorKind> {
        catalog_query(id).stages.iter().map(|s| s.op.kind).collect()
    }

    #[test]
    fn operator_lists_match_the_benchmark_table() {
        use OperatorKind::*;
        assert_eq!(kinds(QueryId::Q1), vec![Map]);
        assert_eq!(kinds(QueryId::Q2), vec![Filter, Map]);
        assert_eq!(kinds(QueryId::Q3), vec![Filter, Filter, Join, Map]);
        assert_eq!(kinds(QueryId::Q4), vec![Join, Max, Average]);
        assert_eq!(kinds(QueryId::Q5), vec![Count]);
        assert_eq!(kinds(QueryId::Q6), vec![Join, Filter, Max, AveragePartition]);
        assert_eq!(kinds(QueryId::SecureStream), vec![Map, Filter, Reduce]);
    }

    #[test]
    fn every_query_plans() {
        for q in QueryId::NEXMARK.into_iter().chain([QueryId::SecureStream]) {
            catalog_query(q).plan().unwrap();
        }
    }

    #[test]
    fn q3_join_has_two_inputs() {
        let q = catalog_query(QueryId::Q3);
        let plan = q.plan().unwrap();
        assert_eq!(plan.inbound[2].len(), 2);
    }

    #[test]
    fn q1_rate_is_configurable() {
        let q = catalog_query_with(QueryId::Q1, &CatalogParams { rate: 0.5, ..CatalogParams::default() });
        assert_eq!(q.stages[0].op.expr_id.as_deref(), Some("scale(price,0.5)"));
    }

    #[test]
    fn parse_ids() {
        assert_eq!("q5".parse::<QueryId>().unwrap(), QueryId::Q5);
        assert_eq!("SecureStream".parse::<QueryId>().unwrap(), QueryId::SecureStream);
        assert_eq!("Q7".parse::<QueryId>(), Err(GeneratorError::UnknownQuery("Q7".into())));
    }
}
