//! Typed interpretation of the string literals carried by RDF documents
//! and data sources.

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::cim::PrimitiveKind;

/// A literal parsed according to a [`PrimitiveKind`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TypedValue {
    Float(f64),
    Integer(i64),
    Boolean(bool),
    Text(String),
    /// Normalized to RFC 3339.
    DateTime(String),
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("`{literal}` is not a valid {expected}")]
pub struct LiteralError {
    pub expected: PrimitiveKind,
    pub literal: String,
}

pub fn parse_literal(kind: PrimitiveKind, literal: &str) -> Result<TypedValue, LiteralError> {
    let fail = || LiteralError {
        expected: kind,
        literal: literal.to_string(),
    };
    let trimmed = literal.trim();
    match kind {
        PrimitiveKind::String => Ok(TypedValue::Text(literal.to_string())),
        PrimitiveKind::Float => trimmed
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(TypedValue::Float)
            .ok_or_else(fail),
        PrimitiveKind::Integer => trimmed
            .parse::<i64>()
            .map(TypedValue::Integer)
            .map_err(|_| fail()),
        // xsd:boolean lexical space
        PrimitiveKind::Boolean => match trimmed {
            "true" | "1" => Ok(TypedValue::Boolean(true)),
            "false" | "0" => Ok(TypedValue::Boolean(false)),
            _ => Err(fail()),
        },
        PrimitiveKind::DateTime => {
            if let Ok(dt) = DateTime::parse_from_rfc3339(trimmed) {
                return Ok(TypedValue::DateTime(dt.to_rfc3339()));
            }
            NaiveDateTime::parse_from_str(trimmed, "%Y-%m-%dT%H:%M:%S%.f")
                .map(|dt| TypedValue::DateTime(dt.and_utc().to_rfc3339()))
                .map_err(|_| fail())
        }
    }
}

pub fn conforms(kind: PrimitiveKind, literal: &str) -> bool {
    parse_literal(kind, literal).is_ok()
}
