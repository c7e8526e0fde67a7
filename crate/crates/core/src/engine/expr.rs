//! Closed registry of map expressions and filter predicates.
//!
//! An expression id is a call string such as `scale(price,0.9)` or
//! `range(price,10,500)`. Arguments are field names, numbers, or quoted
//! strings (`eq(state,'OR')`).

use std::fmt;

use thiserror::Error;

use super::record::{EventRecord, Fields, SchemaId, Value};
use super::OperatorError;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExprError {
    #[error("cannot parse expression `{0}`")]
    Syntax(String),
    #[error("unknown expression `{0}`")]
    Unknown(String),
    #[error("bad arguments for `{0}`")]
    Arity(String),
}

#[derive(Clone, Debug, PartialEq)]
enum Arg {
    Num(f64),
    Text(String),
    Field(String),
}

fn parse_call(src: &str) -> Result<(String, Vec<Arg>), ExprError> {
    let src = src.trim();
    let Some(open) = src.find('(') else {
        return Ok((src.to_owned(), Vec::new()));
    };
    if !src.ends_with(')') {
        return Err(ExprError::Syntax(src.to_owned()));
    }
    let name = src[..open].trim().to_owned();
    let inner = &src[open + 1..src.len() - 1];
    if inner.trim().is_empty() {
        return Ok((name, Vec::new()));
    }
    let args = inner
        .split(',')
        .map(|a| {
            let a = a.trim();
            if a.is_empty() {
                Err(ExprError::Syntax(src.to_owned()))
            } else if let Some(t) = a.strip_prefix('\'').and_then(|t| t.strip_suffix('\'')) {
                Ok(Arg::Text(t.to_owned()))
            } else if let Ok(n) = a.parse::<f64>() {
                Ok(Arg::Num(n))
            } else {
                Ok(Arg::Field(a.to_owned()))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((name, args))
}

fn numeric(rec: &EventRecord, field: &str) -> Result<f64, OperatorError> {
    match rec.get(field) {
        None => Err(OperatorError::MissingField(field.to_owned())),
        Some(v) => v.as_f64().ok_or_else(|| OperatorError::TypeMismatch(field.to_owned())),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MapExpr {
    Identity,
    /// `field <- field * factor`
    Scale { field: String, factor: f64 },
    /// `field <- field + delta`
    Offset { field: String, delta: f64 },
    /// Keep only the listed fields.
    Project(Vec<String>),
}

impl MapExpr {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let (name, args) = parse_call(src)?;
        let arity = || ExprError::Arity(src.to_owned());
        match (name.as_str(), args.as_slice()) {
            ("identity", []) => Ok(MapExpr::Identity),
            ("scale", [Arg::Field(f), Arg::Num(k)]) => Ok(MapExpr::Scale { field: f.clone(), factor: *k }),
            ("offset", [Arg::Field(f), Arg::Num(d)]) => Ok(MapExpr::Offset { field: f.clone(), delta: *d }),
            ("project", fields) if !fields.is_empty() => fields
                .iter()
                .map(|a| match a {
                    Arg::Field(f) => Ok(f.clone()),
                    _ => Err(arity()),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(MapExpr::Project),
            ("identity" | "scale" | "offset" | "project", _) => Err(arity()),
            _ => Err(ExprError::Unknown(src.to_owned())),
        }
    }

    pub fn apply(&self, rec: &EventRecord) -> Result<EventRecord, OperatorError> {
        let mut out = rec.clone();
        match self {
            MapExpr::Identity => {}
            MapExpr::Scale { field, factor } => {
                let v = numeric(rec, field)?;
                set(&mut out.fields, field, Value::Float(v * factor));
            }
            MapExpr::Offset { field, delta } => {
                let v = numeric(rec, field)?;
                let nv = match rec.get(field) {
                    Some(Value::Int(i)) if delta.fract() == 0.0 => Value::Int(i + *delta as i64),
                    _ => Value::Float(v + delta),
                };
                set(&mut out.fields, field, nv);
            }
            MapExpr::Project(keep) => {
                let mut fields = Fields::default();
                for name in keep {
                    let v = rec.get(name).ok_or_else(|| OperatorError::MissingField(name.clone()))?;
                    fields.push(name.clone(), v.clone());
                }
                out.fields = fields;
                out.schema_id = SchemaId::Derived;
            }
        }
        Ok(out)
    }
}

fn set(fields: &mut Fields, name: &str, value: Value) {
    if let Some(slot) = fields.0.iter_mut().find(|(n, _)| n == name) {
        slot.1 = value;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmp {
    Gt,
    Ge,
    Lt,
    Le,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Predicate {
    Threshold { field: String, cmp: Cmp, value: f64 },
    Eq { field: String, value: Value },
    Ne { field: String, value: Value },
    /// Inclusive on both ends.
    Range { field: String, lo: f64, hi: f64 },
}

impl Predicate {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let (name, args) = parse_call(src)?;
        let cmp = match name.as_str() {
            "gt" => Some(Cmp::Gt),
            "ge" => Some(Cmp::Ge),
            "lt" => Some(Cmp::Lt),
            "le" => Some(Cmp::Le),
            _ => None,
        };
        match (name.as_str(), args.as_slice()) {
            (_, [Arg::Field(f), Arg::Num(v)]) if cmp.is_some() => {
                Ok(Predicate::Threshold { field: f.clone(), cmp: cmp.unwrap(), value: *v })
            }
            ("eq" | "ne", [Arg::Field(f), v]) => {
                let value = match v {
                    Arg::Num(n) if n.fract() == 0.0 => Value::Int(*n as i64),
                    Arg::Num(n) => Value::Float(*n),
                    Arg::Text(t) | Arg::Field(t) => Value::Str(t.clone()),
                };
                Ok(if name == "eq" {
                    Predicate::Eq { field: f.clone(), value }
                } else {
                    Predicate::Ne { field: f.clone(), value }
                })
            }
            ("range", [Arg::Field(f), Arg::Num(lo), Arg::Num(hi)]) => {
                Ok(Predicate::Range { field: f.clone(), lo: *lo, hi: *hi })
            }
            ("gt" | "ge" | "lt" | "le" | "eq" | "ne" | "range", _) => Err(ExprError::Arity(src.to_owned())),
            _ => Err(ExprError::Unknown(src.to_owned())),
        }
    }

    pub fn eval(&self, rec: &EventRecord) -> Result<bool, OperatorError> {
        match self {
            Predicate::Threshold { field, cmp, value } => {
                let v = numeric(rec, field)?;
                Ok(match cmp {
                    Cmp::Gt => v > *value,
                    Cmp::Ge => v >= *value,
                    Cmp::Lt => v < *value,
                    Cmp::Le => v <= *value,
                })
            }
            Predicate::Eq { field, value } => Ok(values_equal(lookup(rec, field)?, value)),
            Predicate::Ne { field, value } => Ok(!values_equal(lookup(rec, field)?, value)),
            Predicate::Range { field, lo, hi } => {
                let v = numeric(rec, field)?;
                Ok(v >= *lo && v <= *hi)
            }
        }
    }
}

fn lookup<'a>(rec: &'a EventRecord, field: &str) -> Result<&'a Value, OperatorError> {
    rec.get(field).ok_or_else(|| OperatorError::MissingField(field.to_owned()))
}

fn values_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Str(x), Value::Str(y)) => x == y,
        (Value::Str(_), _) | (_, Value::Str(_)) => false,
        _ => a.as_f64() == b.as_f64(),
    }
}

impl fmt::Display for MapExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MapExpr::Identity => f.write_str("identity"),
            MapExpr::Scale { field, factor } => write!(f, "scale({field},{factor})"),
            MapExpr::Offset { field, delta } => write!(f, "offset({field},{delta})"),
            MapExpr::Project(fields) => write!(f, "project({})", fields.join(",")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flight(delay: i64) -> EventRecord {
        let mut f = Fields::default();
        f.push("carrier_id", 3i64);
        f.push("delay", delay);
        EventRecord::new(SchemaId::Derived, 0, 0, f)
    }

    #[test]
    fn delayed_flight_predicate() {
        let p = Predicate::parse("gt(delay,0)").unwrap();
        assert!(!p.eval(&flight(-5)).unwrap());
        assert!(p.eval(&flight(12)).unwrap());
        assert!(!p.eval(&flight(0)).unwrap());
    }

    #[test]
    fn string_equality_and_range() {
        let mut f = Fields::default();
        f.push("state", "OR");
        f.push("price", 40i64);
        let r = EventRecord::new(SchemaId::Derived, 0, 0, f);
        assert!(Predicate::parse("eq(state,'OR')").unwrap().eval(&r).unwrap());
        assert!(!Predicate::parse("ne(state,'OR')").unwrap().eval(&r).unwrap());
        assert!(Predicate::parse("range(price,40,41)").unwrap().eval(&r).unwrap());
        assert_eq!(
            Predicate::parse("gt(state,1)").unwrap().eval(&r),
            Err(OperatorError::TypeMismatch("state".into()))
        );
        assert_eq!(
            Predicate::parse("gt(nope,1)").unwrap().eval(&r),
            Err(OperatorError::MissingField("nope".into()))
        );
    }

    #[test]
    fn map_expressions() {
        let r = flight(10);
        let scaled = MapExpr::parse("scale(delay,0.5)").unwrap().apply(&r).unwrap();
        assert_eq!(scaled.get("delay"), Some(&Value::Float(5.0)));
        let shifted = MapExpr::parse("offset(delay,3)").unwrap().apply(&r).unwrap();
        assert_eq!(shifted.get("delay"), Some(&Value::Int(13)));
        let p = MapExpr::parse("project(delay)").unwrap().apply(&r).unwrap();
        assert_eq!(p.fields.len(), 1);
        assert_eq!(MapExpr::parse("identity").unwrap().apply(&r).unwrap(), r);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(MapExpr::parse("explode(x)"), Err(ExprError::Unknown(_))));
        assert!(matches!(MapExpr::parse("scale(x)"), Err(ExprError::Arity(_))));
        assert!(matches!(Predicate::parse("gt(x,1"), Err(ExprError::Syntax(_))));
        assert!(matches!(Predicate::parse("range(x,1)"), Err(ExprError::Arity(_))));
    }

    #[test]
    fn display_roundtrips() {
        for src in ["identity", "scale(price,0.9)", "offset(price,2)", "project(a,b)"] {
            let e = MapExpr::parse(src).unwrap();
            assert_eq!(MapExpr::parse(&e.to_string()).unwrap(), e);
        }
    }
}
