//! Test status maps: the universal result of running a test script and
//! feeding its log through the artifact's parser.

use std::collections::btree_map::{self, BTreeMap};
use std::collections::BTreeSet;
use std::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestStatus {
    Passed,
    Failed,
}

/// Parser output that breaks the `{"test id": "passed" | "failed"}` contract.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("parser contract violation: {0}")]
pub struct ContractViolation(pub String);

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct TestStatusMap(BTreeMap<String, TestStatus>);

impl TestStatusMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses parser stdout. Exactly one JSON object is accepted, with
    /// unique non-empty keys and the two status strings as values.
    pub fn from_parser_output(bytes: &[u8]) -> Result<Self, ContractViolation> {
        let mut de = serde_json::Deserializer::from_slice(bytes);
        let map = StrictMap::deserialize(&mut de)
            .map_err(|e| ContractViolation(e.to_string()))?;
        de.end()
            .map_err(|e| ContractViolation(format!("trailing data after JSON object: {e}")))?;
        Ok(map.0)
    }

    pub fn insert(&mut self, id: impl Into<String>, status: TestStatus) -> Option<TestStatus> {
        self.0.insert(id.into(), status)
    }

    pub fn get(&self, id: &str) -> Option<TestStatus> {
        self.0.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> btree_map::Iter<'_, String, TestStatus> {
        self.0.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn with_status(&self, status: TestStatus) -> BTreeSet<String> {
        self.0
            .iter()
            .filter(|(_, s)| **s == status)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn passed(&self) -> BTreeSet<String> {
        self.with_status(TestStatus::Passed)
    }

    pub fn failed(&self) -> BTreeSet<String> {
        self.with_status(TestStatus::Failed)
    }

    pub fn is_passed(&self, id: &str) -> bool {
        self.get(id) == Some(TestStatus::Passed)
    }
}

impl FromIterator<(String, TestStatus)> for TestStatusMap {
    fn from_iter<I: IntoIterator<Item = (String, TestStatus)>>(iter: I) -> Self {
        TestStatusMap(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a TestStatusMap {
    type Item = (&'a String, &'a TestStatus);
    type IntoIter = btree_map::Iter<'a, String, TestStatus>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl<'de> Deserialize<'de> for TestStatusMap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(StrictMap::deserialize(deserializer)?.0)
    }
}

struct StrictMap(TestStatusMap);

impl<'de> Deserialize<'de> for StrictMap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_map(StrictMapVisitor)
    }
}

struct StrictMapVisitor;

impl<'de> Visitor<'de> for StrictMapVisitor {
    type Value = StrictMap;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a JSON object mapping test ids to \"passed\" or \"failed\"")
    }

    fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
        let mut map = BTreeMap::new();
        while let Some(key) = access.next_key::<String>()? {
            if key.is_empty() {
                return Err(de::Error::custom("empty test id"));
            }
            let value: String = access.next_value()?;
            let status = match value.as_str() {
                "passed" => TestStatus::Passed,
                "failed" => TestStatus::Failed,
                other => {
                    return Err(de::Error::custom(format!(
                        "status {other:?} for {key:?} is neither \"passed\" nor \"failed\""
                    )))
                }
            };
            if map.insert(key.clone(), status).is_some() {
                return Err(de::Error::custom(format!("duplicate test id {key:?}")));
            }
        }
        Ok(StrictMap(TestStatusMap(map)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<TestStatusMap, ContractViolation> {
        TestStatusMap::from_parser_output(s.as_bytes())
    }

    #[test]
    fn accepts_the_two_statuses() {
        let m = parse(r#"{"test_a": "passed", "test_b": "failed"}"#).unwrap();
        assert_eq!(m.get("test_a"), Some(TestStatus::Passed));
        assert_eq!(m.get("test_b"), Some(TestStatus::Failed));
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn rejects_arrays() {
        assert!(parse("[]").is_err());
    }

    #[test]
    fn rejects_unknown_status() {
        let err = parse(r#"{"t": "error"}"#).unwrap_err();
        assert!(err.0.contains("neither"), "{err}");
    }

    #[test]
    fn rejects_non_string_values() {
        assert!(parse(r#"{"t": true}"#).is_err());
        assert!(parse(r#"{"t": null}"#).is_err());
    }

    #[test]
    fn rejects_duplicate_keys() {
        let err = parse(r#"{"t": "passed", "t": "passed"}"#).unwrap_err();
        assert!(err.0.contains("duplicate"), "{err}");
    }

    #[test]
    fn rejects_empty_ids_and_trailing_data() {
        assert!(parse(r#"{"": "passed"}"#).is_err());
        assert!(parse(r#"{"t": "passed"} {}"#).is_err());
        assert!(parse("").is_err());
    }

    #[test]
    fn empty_object_is_a_valid_empty_map() {
        assert!(parse("{}\n").unwrap().is_empty());
    }

    #[test]
    fn serializes_as_plain_object() {
        let m: TestStatusMap = [("b".to_string(), TestStatus::Failed), ("a".to_string(), TestStatus::Passed)]
            .into_iter()
            .collect();
        assert_eq!(
            serde_json::to_string(&m).unwrap(),
            r#"{"a":"passed","b":"failed"}"#
        );
    }
}
