use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Mrid, TopologyDocument};
use crate::cim::{CimLibrary, PrimitiveKind, ResolveError};
use crate::literal;

/// Name of the identifier attribute that is folded into the element key.
pub const MRID_ATTRIBUTE: &str = "mRID";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeRef {
    pub mrid: Mrid,
    pub attribute: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeViolation {
    pub mrid: Mrid,
    pub attribute: String,
    pub expected: PrimitiveKind,
    pub literal: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UntypedAttribute {
    pub mrid: Mrid,
    pub attribute: String,
    pub declared_type: String,
}

/// Conformance of a topology document to a class library. Empty iff conformant.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub unknown_classes: BTreeSet<String>,
    pub unknown_attributes: Vec<AttributeRef>,
    /// Reference roles the element's class (or its ancestors) does not declare.
    pub unknown_roles: Vec<AttributeRef>,
    pub type_violations: Vec<TypeViolation>,
    /// Attributes whose declared type resolves neither to a primitive nor a datatype.
    pub untyped_attributes: Vec<UntypedAttribute>,
    /// Elements whose mRID literal disagrees with their rdf:ID.
    pub mrid_mismatches: Vec<AttributeRef>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.unknown_classes.is_empty()
            && self.unknown_attributes.is_empty()
            && self.unknown_roles.is_empty()
            && self.type_violations.is_empty()
            && self.untyped_attributes.is_empty()
            && self.mrid_mismatches.is_empty()
    }
}

pub fn validate(doc: &TopologyDocument, lib: &CimLibrary) -> ValidationReport {
    let mut report = ValidationReport::default();

    for el in doc.elements().values() {
        let Ok(attrs) = lib.resolve_attributes(&el.class_name) else {
            report.unknown_classes.insert(el.class_name.clone());
            continue;
        };
        for (name, literal) in &el.attribute_values {
            let Some(attr) = attrs.iter().find(|a| &a.name == name) else {
                report.unknown_attributes.push(AttributeRef {
                    mrid: el.mrid.clone(),
                    attribute: name.clone(),
                });
                continue;
            };
            match lib.resolve_type(attr) {
                Ok(kind) => {
                    if !literal::conforms(kind, literal) {
                        report.type_violations.push(TypeViolation {
                            mrid: el.mrid.clone(),
                            attribute: name.clone(),
                            expected: kind,
                            literal: literal.clone(),
                        });
                    }
                }
                Err(ResolveError::UnknownType { declared_type, .. }) => {
                    report.untyped_attributes.push(UntypedAttribute {
                        mrid: el.mrid.clone(),
                        attribute: name.clone(),
                        declared_type,
                    });
                }
                Err(ResolveError::UnknownClass(_)) => unreachable!("class resolved above"),
            }
            if name == MRID_ATTRIBUTE && literal != el.mrid.as_str() {
                report.mrid_mismatches.push(AttributeRef {
                    mrid: el.mrid.clone(),
                    attribute: literal.clone(),
                });
            }
        }

        let roles = lib.resolve_references(&el.class_name).unwrap_or_default();
        let mut flagged = BTreeSet::new();
        for edge in doc.edges_from(el.mrid.as_str()) {
            if !roles.iter().any(|r| r.role == edge.role) && flagged.insert(edge.role.as_str()) {
                report.unknown_roles.push(AttributeRef {
                    mrid: el.mrid.clone(),
                    attribute: edge.role.clone(),
                });
            }
        }
    }
    report
}
