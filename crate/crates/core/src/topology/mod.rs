//! CIM/XML/RDF topology documents: element instances keyed by mRID plus the
//! reference edges between them.
//!
//! Parsing keeps every literal exactly as written; typing happens later in
//! [`validate`] and in storage. Edges are held sorted by source mRID (stable,
//! so per-element document order survives), which makes the canonical
//! serialization round-trip to an identical document.

mod diff;
mod validate;

use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use quick_xml::escape::escape;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::xml::{self, Element};

pub use diff::{diff_topologies, TopologyDiff};
pub use validate::{
    validate, AttributeRef, TypeViolation, UntypedAttribute, ValidationReport, MRID_ATTRIBUTE,
};

pub const RDF_NS: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#";
pub const CIM_NS: &str = "http://iec.ch/TC57/2013/CIM-schema-cim16#";

/// Master resource identifier. Never empty.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Mrid(String);

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("mRID must not be empty")]
pub struct EmptyMrid;

impl Mrid {
    pub fn new(id: impl Into<String>) -> Result<Self, EmptyMrid> {
        let id = id.into();
        if id.is_empty() {
            Err(EmptyMrid)
        } else {
            Ok(Mrid(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Mrid {
    type Error = EmptyMrid;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Mrid::new(value)
    }
}

impl TryFrom<&str> for Mrid {
    type Error = EmptyMrid;

    fn try_from(value: &str) -> Result<Self, Self::Error> {
        Mrid::new(value)
    }
}

impl From<Mrid> for String {
    fn from(m: Mrid) -> String {
        m.0
    }
}

impl Borrow<str> for Mrid {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Mrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementInstance {
    pub mrid: Mrid,
    pub class_name: String,
    pub attribute_values: BTreeMap<String, String>,
}

impl ElementInstance {
    pub fn new(mrid: Mrid, class_name: impl Into<String>) -> Self {
        ElementInstance {
            mrid,
            class_name: class_name.into(),
            attribute_values: BTreeMap::new(),
        }
    }

    pub fn with(mut self, attribute: impl Into<String>, literal: impl Into<String>) -> Self {
        self.attribute_values
            .insert(attribute.into(), literal.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReferenceEdge {
    pub from: Mrid,
    pub role: String,
    pub to: Mrid,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("mRID `{0}` is declared more than once")]
    DuplicateMrid(Mrid),
    #[error("description <{0}> carries neither rdf:ID nor rdf:about")]
    MissingId(String),
    #[error("description `{0}` has no class")]
    MissingClass(Mrid),
    #[error("reference `{role}` has an empty role or target on `{from}`")]
    BadReference { from: Mrid, role: String },
    #[error("edge source `{0}` is not an element of the document")]
    DanglingEdgeSource(Mrid),
}

impl From<xml::XmlError> for TopologyError {
    fn from(e: xml::XmlError) -> Self {
        TopologyError::MalformedXml(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RdfOptions {
    /// Drop the `Class.` qualifier of CIM property tags
    /// (`cim:IdentifiedObject.name` becomes `name`).
    pub strip_class_qualifier: bool,
}

impl Default for RdfOptions {
    fn default() -> Self {
        RdfOptions {
            strip_class_qualifier: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TopologyDocument {
    elements: BTreeMap<Mrid, ElementInstance>,
    edges: Vec<ReferenceEdge>,
    source_digest: String,
}

impl TopologyDocument {
    pub fn empty() -> Self {
        TopologyDocument::from_parts(Vec::new(), Vec::new()).expect("empty document is valid")
    }

    /// Assembles a document from instances and edges. Edge sources must be
    /// elements of the document; edge targets may be external.
    pub fn from_parts(
        elements: impl IntoIterator<Item = ElementInstance>,
        mut edges: Vec<ReferenceEdge>,
    ) -> Result<Self, TopologyError> {
        let mut map = BTreeMap::new();
        for el in elements {
            if el.class_name.is_empty() {
                return Err(TopologyError::MissingClass(el.mrid));
            }
            if map.contains_key(&el.mrid) {
                return Err(TopologyError::DuplicateMrid(el.mrid));
            }
            map.insert(el.mrid.clone(), el);
        }
        for e in &edges {
            if e.role.is_empty() {
                return Err(TopologyError::BadReference {
                    from: e.from.clone(),
                    role: e.role.clone(),
                });
            }
            if !map.contains_key(&e.from) {
                return Err(TopologyError::DanglingEdgeSource(e.from.clone()));
            }
        }
        edges.sort_by(|a, b| a.from.cmp(&b.from));
        let mut doc = TopologyDocument {
            elements: map,
            edges,
            source_digest: String::new(),
        };
        doc.source_digest = hex::encode(Sha256::digest(doc.to_canonical_xml().as_bytes()));
        Ok(doc)
    }

    pub fn elements(&self) -> &BTreeMap<Mrid, ElementInstance> {
        &self.elements
    }

    pub fn element(&self, mrid: &str) -> Option<&ElementInstance> {
        self.elements.get(mrid)
    }

    pub fn edges(&self) -> &[ReferenceEdge] {
        &self.edges
    }

    pub fn edges_from<'a>(&'a self, mrid: &'a str) -> impl Iterator<Item = &'a ReferenceEdge> + 'a {
        self.edges.iter().filter(move |e| e.from.as_str() == mrid)
    }

    /// Edges whose target is not an element of this document.
    pub fn unresolved_edges(&self) -> Vec<&ReferenceEdge> {
        self.edges
            .iter()
            .filter(|e| !self.elements.contains_key(&e.to))
            .collect()
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Rebuilds the document with `f` applied to the parts.
    pub fn modified(
        &self,
        f: impl FnOnce(&mut Vec<ElementInstance>, &mut Vec<ReferenceEdge>),
    ) -> Result<TopologyDocument, TopologyError> {
        let mut elements: Vec<_> = self.elements.values().cloned().collect();
        let mut edges = self.edges.clone();
        f(&mut elements, &mut edges);
        TopologyDocument::from_parts(elements, edges)
    }

    /// UTF-8 RDF/XML with elements sorted by mRID and attributes by name.
    pub fn to_canonical_xml(&self) -> String {
        let mut out = String::new();
        out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        let _ = writeln!(
            out,
            "<rdf:RDF xmlns:rdf=\"{RDF_NS}\" xmlns:cim=\"{CIM_NS}\">"
        );
        for el in self.elements.values() {
            let (id_attr, id) = identifier(el.mrid.as_str());
            let _ = writeln!(
                out,
                "  <cim:{} rdf:{id_attr}=\"{}\">",
                el.class_name,
                text(id)
            );
            for (name, literal) in &el.attribute_values {
                let _ = writeln!(out, "    <cim:{name}>{}</cim:{name}>", text(literal));
            }
            for edge in self.edges_from(el.mrid.as_str()) {
                let _ = writeln!(
                    out,
                    "    <cim:{} rdf:resource=\"{}\"/>",
                    edge.role,
                    text(&resource(edge.to.as_str()))
                );
            }
            let _ = writeln!(out, "  </cim:{}>", el.class_name);
        }
        out.push_str("</rdf:RDF>\n");
        out
    }
}

fn is_uri_like(id: &str) -> bool {
    id.contains(':') || id.contains('/') || id.chars().any(char::is_whitespace)
}

fn identifier(id: &str) -> (&'static str, &str) {
    if is_uri_like(id) {
        ("about", id)
    } else {
        ("ID", id)
    }
}

fn resource(id: &str) -> String {
    if is_uri_like(id) {
        id.to_string()
    } else {
        format!("#{id}")
    }
}

fn text(s: &str) -> String {
    escape(s).replace('\r', "&#13;")
}

pub fn parse_topology(rdf_bytes: &[u8]) -> Result<TopologyDocument, TopologyError> {
    parse_topology_with(rdf_bytes, &RdfOptions::default())
}

pub fn parse_topology_with(
    rdf_bytes: &[u8],
    opts: &RdfOptions,
) -> Result<TopologyDocument, TopologyError> {
    let root = xml::parse(rdf_bytes)?;
    let mut elements: Vec<ElementInstance> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut edges = Vec::new();

    for desc in &root.children {
        let mrid = description_id(desc)?;
        if !seen.insert(mrid.clone()) {
            return Err(TopologyError::DuplicateMrid(mrid));
        }
        let is_generic = desc.local_name() == "Description";
        let mut class_name = if is_generic {
            String::new()
        } else {
            desc.local_name().to_string()
        };
        let mut instance_attrs = BTreeMap::new();

        for prop in &desc.children {
            if let Some(target) = prop.attr("rdf:resource") {
                if is_generic && prop.local_name() == "type" {
                    class_name = target
                        .rsplit(['#', '/'])
                        .next()
                        .unwrap_or_default()
                        .to_string();
                    continue;
                }
                let role = property_name(prop, opts);
                let to = Mrid::new(target.strip_prefix('#').unwrap_or(target)).map_err(|_| {
                    TopologyError::BadReference {
                        from: mrid.clone(),
                        role: role.clone(),
                    }
                })?;
                if role.is_empty() {
                    return Err(TopologyError::BadReference {
                        from: mrid.clone(),
                        role,
                    });
                }
                edges.push(ReferenceEdge {
                    from: mrid.clone(),
                    role,
                    to,
                });
            } else {
                instance_attrs.insert(property_name(prop, opts), prop.text.clone());
            }
        }

        if class_name.is_empty() {
            return Err(TopologyError::MissingClass(mrid));
        }
        elements.push(ElementInstance {
            mrid,
            class_name,
            attribute_values: instance_attrs,
        });
    }

    TopologyDocument::from_parts(elements, edges)
}

fn description_id(desc: &Element) -> Result<Mrid, TopologyError> {
    let raw = desc
        .attr("rdf:ID")
        .or_else(|| desc.attr("rdf:about"))
        .ok_or_else(|| TopologyError::MissingId(desc.name.clone()))?;
    let raw = raw.strip_prefix('#').unwrap_or(raw);
    Mrid::new(raw).map_err(|_| TopologyError::MissingId(desc.name.clone()))
}

fn property_name(prop: &Element, opts: &RdfOptions) -> String {
    let local = prop.local_name();
    if opts.strip_class_qualifier {
        local.rsplit_once('.').map_or(local, |(_, p)| p).to_string()
    } else {
        local.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_root() {
        let doc = parse_topology(format!("<rdf:RDF xmlns:rdf=\"{RDF_NS}\"/>").as_bytes()).unwrap();
        assert!(doc.is_empty());
        assert!(doc.edges().is_empty());
    }

    #[test]
    fn duplicate_and_missing_ids() {
        let dup = r##"<rdf:RDF xmlns:rdf="r" xmlns:cim="c">
            <cim:Breaker rdf:ID="BRK-001"/><cim:Breaker rdf:about="#BRK-001"/></rdf:RDF>"##;
        assert_eq!(
            parse_topology(dup.as_bytes()),
            Err(TopologyError::DuplicateMrid(Mrid::new("BRK-001").unwrap()))
        );
        let missing = r#"<rdf:RDF xmlns:rdf="r" xmlns:cim="c"><cim:Breaker/></rdf:RDF>"#;
        assert!(matches!(
            parse_topology(missing.as_bytes()),
            Err(TopologyError::MissingId(_))
        ));
        assert!(matches!(
            parse_topology(b"<rdf:RDF>"),
            Err(TopologyError::MalformedXml(_))
        ));
    }

    #[test]
    fn generic_descriptions_and_about() {
        let doc = r##"<rdf:RDF xmlns:rdf="r" xmlns:cim="c">
            <rdf:Description rdf:about="#X1">
              <rdf:type rdf:resource="http://iec.ch/TC57/CIM#Breaker"/>
              <cim:IdentifiedObject.name> spaced </cim:IdentifiedObject.name>
            </rdf:Description></rdf:RDF>"##;
        let doc = parse_topology(doc.as_bytes()).unwrap();
        let el = doc.element("X1").unwrap();
        assert_eq!(el.class_name, "Breaker");
        assert_eq!(el.attribute_values["name"], " spaced ");
    }

    #[test]
    fn qualifier_can_be_kept() {
        let doc = r#"<rdf:RDF xmlns:rdf="r" xmlns:cim="c">
            <cim:Breaker rdf:ID="B"><cim:Switch.normalOpen>true</cim:Switch.normalOpen></cim:Breaker></rdf:RDF>"#;
        let opts = RdfOptions {
            strip_class_qualifier: false,
        };
        let doc = parse_topology_with(doc.as_bytes(), &opts).unwrap();
        assert!(doc
            .element("B")
            .unwrap()
            .attribute_values
            .contains_key("Switch.normalOpen"));
    }

    #[test]
    fn external_targets_are_flagged() {
        let doc = r##"<rdf:RDF xmlns:rdf="r" xmlns:cim="c">
            <cim:Terminal rdf:ID="T"><cim:Terminal.ConnectivityNode rdf:resource="#CN-9"/></cim:Terminal></rdf:RDF>"##;
        let doc = parse_topology(doc.as_bytes()).unwrap();
        assert_eq!(doc.edges().len(), 1);
        assert_eq!(doc.unresolved_edges().len(), 1);
        assert_eq!(doc.unresolved_edges()[0].to.as_str(), "CN-9");
    }

    #[test]
    fn canonical_round_trip_with_odd_literals() {
        let el = ElementInstance::new(Mrid::new("urn:uuid:1").unwrap(), "Breaker")
            .with("name", "a & b <c> \"q\"\r\n")
            .with("empty", "");
        let edge = ReferenceEdge {
            from: el.mrid.clone(),
            role: "Location".into(),
            to: Mrid::new("http://x/y#z").unwrap(),
        };
        let doc = TopologyDocument::from_parts([el], vec![edge]).unwrap();
        let again = parse_topology(doc.to_canonical_xml().as_bytes()).unwrap();
        assert_eq!(doc, again);
    }
}
