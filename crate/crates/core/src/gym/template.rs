use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Example, GymError};

/// Renders a record's fields into an input string: each field's value
/// preceded by its literal prefix, everything joined by single spaces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub name: String,
    /// `(prefix, field)` pairs in rendering order; an empty prefix is
    /// omitted.
    pub fields: Vec<(String, String)>,
    pub target: String,
}

impl Template {
    pub fn new(name: &str, fields: &[(&str, &str)], target: &str) -> Self {
        Self {
            name: name.into(),
            fields: fields.iter().map(|(p, f)| (p.to_string(), f.to_string())).collect(),
            target: target.into(),
        }
    }

    /// `premise: <premise> hypothesis: <hypothesis>` with the label as
    /// target.
    pub fn nli() -> Self {
        Self::new("nli", &[("premise:", "premise"), ("hypothesis:", "hypothesis")], "label")
    }

    /// `question: <question> context: <context>` with the answer as target.
    pub fn mrc() -> Self {
        Self::new("mrc", &[("question:", "question"), ("context:", "context")], "answer")
    }

    /// Passes the `input` field through unchanged.
    pub fn identity() -> Self {
        Self::new("identity", &[("", "input")], "output")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "nli" => Some(Self::nli()),
            "mrc" => Some(Self::mrc()),
            "identity" => Some(Self::identity()),
            _ => None,
        }
    }

    pub fn apply(&self, record: &BTreeMap<String, String>) -> Result<Example, GymError> {
        let get = |field: &str| {
            record
                .get(field)
                .ok_or_else(|| GymError::MissingField(field.to_string()))
        };
        let mut parts: Vec<&str> = Vec::with_capacity(self.fields.len() * 2);
        for (prefix, field) in &self.fields {
            if !prefix.is_empty() {
                parts.push(prefix);
            }
            parts.push(get(field)?);
        }
        Ok(Example::new(parts.join(" "), get(&self.target)?.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn nli_rendering() {
        let e = Template::nli()
            .apply(&record(&[("premise", "P"), ("hypothesis", "H"), ("label", "entailment")]))
            .unwrap();
        assert_eq!(e, Example::new("premise: P hypothesis: H", "entailment"));
    }

    #[test]
    fn mrc_rendering() {
        let e = Template::mrc()
            .apply(&record(&[("question", "Q"), ("context", "C"), ("answer", "A")]))
            .unwrap();
        assert_eq!(e, Example::new("question: Q context: C", "A"));
    }

    #[test]
    fn identity_keeps_input() {
        let e = Template::identity()
            .apply(&record(&[("input", "some  text"), ("output", "o")]))
            .unwrap();
        assert_eq!(e.input, "some  text");
    }

    #[test]
    fn missing_field_is_named() {
        let err = Template::nli()
            .apply(&record(&[("premise", "P"), ("label", "x")]))
            .unwrap_err();
        assert!(err.to_string().contains("hypothesis"));
    }
}
