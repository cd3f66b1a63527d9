//! JSON report assembly.
//!
//! Reports are `serde_json` objects with insertion-ordered keys. Floats are
//! rounded to 12 significant digits before serialization so that identical
//! inputs give byte-identical reports; non-finite values are written as the
//! strings `"inf"`, `"-inf"` and `"nan"`. Wall-clock quantities live only in
//! the trailing `timing` block.

use std::time::Duration;

use clusteriv::data::Diagnostic;
use clusteriv::grid::GridInterval;
use serde_json::{Map, Value};

/// Report schema version.
pub const SCHEMA: u64 = 1;

/// A float rounded to 12 significant digits.
pub fn num(x: f64) -> Value {
    if x.is_nan() {
        Value::from("nan")
    } else if x.is_infinite() {
        Value::from(if x > 0.0 { "inf" } else { "-inf" })
    } else {
        let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
        Value::from(rounded)
    }
}

/// An optional float; `None` becomes `null`.
pub fn opt_num(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

/// A list of floats.
pub fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

/// Diagnostics as objects with severity, code, pair and message.
pub fn diagnostics(diags: &[Diagnostic]) -> Value {
    Value::Array(
        diags
            .iter()
            .map(|d| {
                let mut m = Map::new();
                m.insert(
                    "severity".into(),
                    Value::from(format!("{:?}", d.severity).to_lowercase()),
                );
                m.insert("code".into(), Value::from(d.code));
                m.insert("pair".into(), d.pair.map_or(Value::Null, Value::from));
                m.insert("message".into(), Value::from(d.message.clone()));
                Value::Object(m)
            })
            .collect(),
    )
}

/// A grid confidence set.
pub fn grid_interval(ci: &GridInterval) -> Value {
    let mut m = Map::new();
    m.insert("lower".into(), opt_num(ci.lower));
    m.insert("upper".into(), opt_num(ci.upper));
    m.insert("retained_points".into(), Value::from(ci.retained));
    m.insert("connected".into(), Value::from(ci.connected));
    m.insert("touches_grid_edge".into(), Value::from(ci.touches_edge));
    Value::Object(m)
}

/// Builder for one report.
#[derive(Debug)]
pub struct Report {
    body: Map<String, Value>,
}

impl Report {
    /// Starts a report for `command`.
    pub fn new(command: &str) -> Self {
        let mut body = Map::new();
        body.insert("schema".into(), Value::from(SCHEMA));
        body.insert("command".into(), Value::from(command));
        Self { body }
    }

    /// Appends a top-level field.
    pub fn field(&mut self, key: &str, value: Value) -> &mut Self {
        self.body.insert(key.into(), value);
        self
    }

    /// Finishes the report with the timing block.
    pub fn finish(mut self, elapsed: Duration) -> Value {
        let mut t = Map::new();
        t.insert("elapsed_seconds".into(), Value::from(elapsed.as_secs_f64()));
        self.body.insert("timing".into(), Value::Object(t));
        Value::Object(self.body)
    }
}

/// Builds an object from key-value pairs in order.
pub fn object<const N: usize>(fields: [(&str, Value); N]) -> Value {
    Value::Object(
        fields
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_are_rounded_to_twelve_digits() {
        assert_eq!(num(0.1 + 0.2).to_string(), "0.3");
        assert_eq!(num(1.0 / 3.0).to_string(), "0.333333333333");
        assert_eq!(num(f64::INFINITY), Value::from("inf"));
        assert_eq!(num(-2.5e-20).to_string(), "-2.5e-20");
    }

    #[test]
    fn keys_keep_insertion_order() {
        let v = object([("z", Value::from(1)), ("a", Value::from(2))]);
        assert_eq!(v.to_string(), r#"{"z":1,"a":2}"#);
    }
}
