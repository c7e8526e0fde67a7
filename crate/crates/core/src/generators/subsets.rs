use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{EventRecord, Fields, SchemaId, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    Int,
    Float,
    Str,
}

impl FieldType {
    pub fn matches(self, v: &Value) -> bool {
        matches!((self, v), (FieldType::Int, Value::Int(_)) | (FieldType::Float, Value::Float(_)) | (FieldType::Str, Value::Str(_)))
    }
}

/// Field names and types of a schema, in declaration order.
pub fn field_types(schema: SchemaId) -> &'static [(&'static str, FieldType)] {
    use FieldType::*;
    match schema {
        SchemaId::Person => &[("id", Int), ("name", Str), ("email", Str), ("state", Str), ("city", Str)],
        SchemaId::Auction => &[
            ("id", Int),
            ("item", Str),
            ("category", Int),
            ("seller", Int),
            ("initial_bid", Int),
            ("expires", Int),
        ],
        SchemaId::Bid => &[("auction", Int), ("bidder", Int), ("price", Int), ("dt", Int)],
        SchemaId::Flight => &[
            ("carrier_id", Int),
            ("origin", Str),
            ("dest", Str),
            ("dep_time", Int),
            ("delay", Int),
            ("distance", Int),
        ],
        SchemaId::Derived => &[],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemaVariant {
    pub fields: Vec<(String, FieldType)>,
    pub records: Vec<EventRecord>,
}

fn random_value(rng: &mut ChaCha8Rng, ty: FieldType) -> Value {
    match ty {
        FieldType::Int => Value::Int(rng.gen_range(0..10_000)),
        FieldType::Float => Value::Float(rng.gen_range(0.0..10_000.0)),
        FieldType::Str => {
            let len = rng.gen_range(3..12);
            Value::Str((0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect())
        }
    }
}

/// Random nonempty field subsets of `schema`, each with `records` records of
/// random values of the right types.
pub fn synth_schema_subsets(
    schema: &[(&str, FieldType)],
    seed: u64,
    n_variants: usize,
    records: usize,
) -> Vec<SchemaVariant> {
    if schema.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_variants)
        .map(|_| {
            let fields: Vec<(String, FieldType)> = loop {
                let pick: Vec<_> = schema
                    .iter()
                    .filter(|_| rng.gen_bool(0.5))
                    .map(|(n, t)| ((*n).to_owned(), *t))
                    .collect();
                if !pick.is_empty() {
                    break pick;
                }
            };
            let recs = (0..records)
                .map(|i| {
                    let mut f = Fields::default();
                    for (name, ty) in &fields {
                        f.push(name.clone(), random_value(&mut rng, *ty));
                    }
                    EventRecord::new(SchemaId::Derived, i as u64, i as u64, f)
                })
                .collect();
            SchemaVariant { fields, records: recs }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn single_field_schema() {
        let v = synth_schema_subsets(&[("x", FieldType::Int)], 5, 1, 3);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].fields, vec![("x".to_owned(), FieldType::Int)]);
        assert_eq!(v[0].records.len(), 3);
    }

    #[test]
    fn variants_are_typed_subsets() {
        for schema in [SchemaId::Person, SchemaId::Auction, SchemaId::Bid, SchemaId::Flight] {
            let decl = field_types(schema);
            assert_eq!(decl.iter().map(|(n, _)| *n).collect::<Vec<_>>(), schema.declared_fields());
            for v in synth_schema_subsets(decl, 9, 20, 10) {
                for (name, ty) in &v.fields {
                    assert!(decl.contains(&(name.as_str(), *ty)));
                }
                for r in &v.records {
                    for (name, ty) in &v.fields {
                        assert!(ty.matches(r.get(name).unwrap()));
                    }
                }
            }
        }
    }

    #[test]
    fn seeds_give_distinct_subsets() {
        let decl = field_types(SchemaId::Auction);
        let distinct: HashSet<Vec<String>> = (0..100)
            .map(|s| synth_schema_subsets(decl, s, 1, 0)[0].fields.iter().map(|f| f.0.clone()).collect())
            .collect();
        // 63 nonempty subsets exist; 100 draws should hit a good share of them.
        assert!(distinct.len() > 30, "{}", distinct.len());
    }
}
