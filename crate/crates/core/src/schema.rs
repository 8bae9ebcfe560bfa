//! Versioned JSON documents.
//!
//! Every file the toolkit reads or writes is a JSON object carrying
//! `schema_version` and `kind` next to the payload fields.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("unsupported schema_version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("expected document kind `{expected}`, found `{found}`")]
    Kind { expected: String, found: String },
    #[error("invalid document: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    kind: String,
}

#[derive(Serialize)]
struct DocumentRef<'a, T> {
    schema_version: u32,
    kind: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

/// Serializes `body` as a pretty-printed versioned document of the given kind.
pub fn to_document<T: Serialize>(kind: &str, body: &T) -> Result<String, SchemaError> {
    let mut s = serde_json::to_string_pretty(&DocumentRef {
        schema_version: SCHEMA_VERSION,
        kind,
        body,
    })?;
    s.push('\n');
    Ok(s)
}

/// Parses a versioned document, checking version and kind before the payload.
pub fn from_document<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T, SchemaError> {
    let header: Header = serde_json::from_str(text)?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(SchemaError::Version {
            found: header.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    if header.kind != kind {
        return Err(SchemaError::Kind {
            expected: kind.to_string(),
            found: header.kind,
        });
    }
    let mut map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(text)?;
    map.remove("schema_version");
    map.remove("kind");
    Ok(serde_json::from_value(serde_json::Value::Object(map))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Point {
        x: f64,
        y: f64,
    }

    #[test]
    fn envelope_round_trip() {
        let p = Point { x: 0.1, y: -2.5 };
        let text = to_document("point", &p).unwrap();
        assert!(text.contains("\"schema_version\": 1"));
        let back: Point = from_document("point", &text).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn rejects_wrong_kind_and_version() {
        let text = to_document("point", &Point { x: 1.0, y: 2.0 }).unwrap();
        assert!(matches!(
            from_document::<Point>("line", &text),
            Err(SchemaError::Kind { .. })
        ));
        let bumped = text.replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(matches!(
            from_document::<Point>("point", &bumped),
            Err(SchemaError::Version { found: 9, .. })
        ));
    }
}
