//! CIM class library: classes, attributes, datatypes and the inheritance
//! queries the rest of the gateway is built on.
//!
//! A [`CimLibrary`] is immutable once built. It is normally loaded from an
//! XMI export (see [`load_library`]) but can also be assembled directly with
//! [`CimLibrary::new`], which enforces the same invariants.

mod diff;
mod xmi;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use diff::{diff_libraries, ClassChange, LibraryDiff, TypeChange};
pub use xmi::{load_library, load_library_with, XmiTags};

/// Value kinds a CIM attribute can ultimately resolve to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PrimitiveKind {
    Float,
    Integer,
    Boolean,
    String,
    DateTime,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 5] = [
        PrimitiveKind::Float,
        PrimitiveKind::Integer,
        PrimitiveKind::Boolean,
        PrimitiveKind::String,
        PrimitiveKind::DateTime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::Float => "Float",
            PrimitiveKind::Integer => "Integer",
            PrimitiveKind::Boolean => "Boolean",
            PrimitiveKind::String => "String",
            PrimitiveKind::DateTime => "DateTime",
        }
    }

    /// Canonical names only. Aliases (`Double`, `int`, ...) are an XMI
    /// reader concern, see [`XmiTags::primitive_aliases`].
    pub fn from_name(name: &str) -> Option<PrimitiveKind> {
        PrimitiveKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PrimitiveKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PrimitiveKind::from_name(s).ok_or_else(|| format!("unknown primitive kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Multiplicity {
    One,
    #[default]
    Optional,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CimAttribute {
    pub name: String,
    /// Either a primitive kind name or the name of a [`CimDatatype`].
    pub declared_type: String,
    #[serde(default)]
    pub multiplicity: Multiplicity,
}

impl CimAttribute {
    pub fn new(name: impl Into<String>, declared_type: impl Into<String>) -> Self {
        CimAttribute {
            name: name.into(),
            declared_type: declared_type.into(),
            multiplicity: Multiplicity::Optional,
        }
    }
}

/// An association end: instances of the owning class point at `target`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CimReference {
    pub role: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CimClass {
    pub name: String,
    pub superclass: Option<String>,
    pub own_attributes: Vec<CimAttribute>,
    pub references: Vec<CimReference>,
}

impl CimClass {
    pub fn new(name: impl Into<String>) -> Self {
        CimClass {
            name: name.into(),
            superclass: None,
            own_attributes: Vec::new(),
            references: Vec::new(),
        }
    }

    pub fn extends(mut self, superclass: impl Into<String>) -> Self {
        self.superclass = Some(superclass.into());
        self
    }

    pub fn attr(mut self, name: impl Into<String>, declared_type: impl Into<String>) -> Self {
        self.own_attributes
            .push(CimAttribute::new(name, declared_type));
        self
    }

    pub fn reference(mut self, role: impl Into<String>, target: impl Into<String>) -> Self {
        self.references.push(CimReference {
            role: role.into(),
            target: target.into(),
        });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CimDatatype {
    pub name: String,
    pub value_kind: PrimitiveKind,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LibraryError {
    #[error(transparent)]
    MalformedXml(#[from] XmlErrorMessage),
    #[error("class `{class}` extends unknown class `{superclass}`")]
    DanglingSuperclass { class: String, superclass: String },
    #[error("inheritance cycle through {}", .0.join(" -> "))]
    InheritanceCycle(Vec<String>),
    #[error("class `{0}` is defined more than once")]
    DuplicateClass(String),
    #[error("datatype `{0}` is defined more than once")]
    DuplicateDatatype(String),
    #[error("datatype `{0}` clashes with a primitive kind or class name")]
    ReservedDatatypeName(String),
    #[error("class `{class}` declares attribute `{attribute}` twice")]
    DuplicateAttribute { class: String, attribute: String },
    #[error("attribute `{class}.{attribute}` has no declared type")]
    EmptyDeclaredType { class: String, attribute: String },
    #[error("class `{0}` declares more than one superclass")]
    MultipleSuperclasses(String),
    #[error("datatype `{datatype}` has value kind `{kind}`, which is not a primitive kind")]
    UnknownPrimitive { datatype: String, kind: String },
}

/// String form of a low-level XML error, kept comparable for tests.
#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("malformed XML: {0}")]
pub struct XmlErrorMessage(pub String);

impl From<crate::xml::XmlError> for LibraryError {
    fn from(e: crate::xml::XmlError) -> Self {
        LibraryError::MalformedXml(XmlErrorMessage(e.to_string()))
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ResolveError {
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("attribute `{attribute}` has type `{declared_type}`, which is neither a primitive nor a datatype")]
    UnknownType {
        attribute: String,
        declared_type: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CimLibrary {
    version: String,
    classes: BTreeMap<String, CimClass>,
    datatypes: BTreeMap<String, CimDatatype>,
}

impl CimLibrary {
    /// Builds a library, rejecting duplicates, dangling superclasses and cycles.
    pub fn new(
        version: impl Into<String>,
        classes: impl IntoIterator<Item = CimClass>,
        datatypes: impl IntoIterator<Item = CimDatatype>,
    ) -> Result<Self, LibraryError> {
        let mut class_map = BTreeMap::new();
        for class in classes {
            let mut seen = BTreeSet::new();
            for attr in &class.own_attributes {
                if attr.declared_type.is_empty() {
                    return Err(LibraryError::EmptyDeclaredType {
                        class: class.name.clone(),
                        attribute: attr.name.clone(),
                    });
                }
                if !seen.insert(attr.name.as_str()) {
                    return Err(LibraryError::DuplicateAttribute {
                        class: class.name.clone(),
                        attribute: attr.name.clone(),
                    });
                }
            }
            if class_map.contains_key(&class.name) {
                return Err(LibraryError::DuplicateClass(class.name));
            }
            class_map.insert(class.name.clone(), class);
        }

        let mut datatype_map = BTreeMap::new();
        for dt in datatypes {
            if PrimitiveKind::from_name(&dt.name).is_some() || class_map.contains_key(&dt.name) {
                return Err(LibraryError::ReservedDatatypeName(dt.name));
            }
            if datatype_map.contains_key(&dt.name) {
                return Err(LibraryError::DuplicateDatatype(dt.name));
            }
            datatype_map.insert(dt.name.clone(), dt);
        }

        for class in class_map.values() {
            if let Some(sup) = &class.superclass {
                if !class_map.contains_key(sup) {
                    return Err(LibraryError::DanglingSuperclass {
                        class: class.name.clone(),
                        superclass: sup.clone(),
                    });
                }
            }
        }

        // Each chain is at most |classes| long unless it loops.
        for start in class_map.keys() {
            let mut path = vec![start.clone()];
            let mut current = start;
            while let Some(sup) = class_map[current].superclass.as_ref() {
                if let Some(pos) = path.iter().position(|p| p == sup) {
                    let mut cycle = path[pos..].to_vec();
                    cycle.push(sup.clone());
                    return Err(LibraryError::InheritanceCycle(cycle));
                }
                path.push(sup.clone());
                current = sup;
            }
        }

        Ok(CimLibrary {
            version: version.into(),
            classes: class_map,
            datatypes: datatype_map,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Same content under another version string.
    pub fn with_version(mut self, version: impl Into<String>) -> Self {
        self.version = version.into();
        self
    }

    pub fn classes(&self) -> &BTreeMap<String, CimClass> {
        &self.classes
    }

    pub fn datatypes(&self) -> &BTreeMap<String, CimDatatype> {
        &self.datatypes
    }

    pub fn class(&self, name: &str) -> Option<&CimClass> {
        self.classes.get(name)
    }

    pub fn contains_class(&self, name: &str) -> bool {
        self.classes.contains_key(name)
    }

    /// The class and its ancestors, root first.
    pub fn ancestry(&self, class_name: &str) -> Result<Vec<&CimClass>, ResolveError> {
        let mut chain = Vec::new();
        let mut current = self
            .classes
            .get(class_name)
            .ok_or_else(|| ResolveError::UnknownClass(class_name.to_string()))?;
        loop {
            chain.push(current);
            match &current.superclass {
                Some(sup) => current = &self.classes[sup],
                None => break,
            }
        }
        chain.reverse();
        Ok(chain)
    }

    /// True when `class_name` is `ancestor` or inherits from it.
    pub fn is_kind_of(&self, class_name: &str, ancestor: &str) -> bool {
        self.ancestry(class_name)
            .map(|chain| chain.iter().any(|c| c.name == ancestor))
            .unwrap_or(false)
    }

    /// Own plus inherited attributes, root ancestor first, each name once.
    ///
    /// A redeclaration in a subclass replaces the inherited attribute but
    /// keeps the position where the ancestor introduced it.
    pub fn resolve_attributes(&self, class_name: &str) -> Result<Vec<CimAttribute>, ResolveError> {
        let mut resolved: Vec<CimAttribute> = Vec::new();
        for class in self.ancestry(class_name)? {
            for attr in &class.own_attributes {
                match resolved.iter_mut().find(|a| a.name == attr.name) {
                    Some(slot) => *slot = attr.clone(),
                    None => resolved.push(attr.clone()),
                }
            }
        }
        Ok(resolved)
    }

    /// Own plus inherited reference roles, with the same shadowing rule as
    /// [`resolve_attributes`](Self::resolve_attributes).
    pub fn resolve_references(&self, class_name: &str) -> Result<Vec<CimReference>, ResolveError> {
        let mut resolved: Vec<CimReference> = Vec::new();
        for class in self.ancestry(class_name)? {
            for r in &class.references {
                match resolved.iter_mut().find(|x| x.role == r.role) {
                    Some(slot) => *slot = r.clone(),
                    None => resolved.push(r.clone()),
                }
            }
        }
        Ok(resolved)
    }

    /// Resolves a declared type to its primitive kind, going through the
    /// datatype table when the type is not itself a primitive.
    pub fn resolve_type(&self, attr: &CimAttribute) -> Result<PrimitiveKind, ResolveError> {
        if let Some(kind) = PrimitiveKind::from_name(&attr.declared_type) {
            return Ok(kind);
        }
        self.datatypes
            .get(&attr.declared_type)
            .map(|dt| dt.value_kind)
            .ok_or_else(|| ResolveError::UnknownType {
                attribute: attr.name.clone(),
                declared_type: attr.declared_type.clone(),
            })
    }

    /// Looks up `attribute` on `class_name` (inheritance-aware) and resolves its kind.
    pub fn attribute_kind(
        &self,
        class_name: &str,
        attribute: &str,
    ) -> Result<Option<PrimitiveKind>, ResolveError> {
        let attrs = self.resolve_attributes(class_name)?;
        match attrs.iter().find(|a| a.name == attribute) {
            Some(a) => self.resolve_type(a).map(Some),
            None => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> CimLibrary {
        CimLibrary::new(
            "t",
            [
                CimClass::new("A").attr("id", "String").attr("x", "Float"),
                CimClass::new("B").extends("A").attr("y", "Integer"),
                CimClass::new("C")
                    .extends("B")
                    .attr("x", "Amps")
                    .attr("z", "Boolean"),
            ],
            [CimDatatype {
                name: "Amps".into(),
                value_kind: PrimitiveKind::Float,
            }],
        )
        .unwrap()
    }

    #[test]
    fn shadowing_keeps_ancestor_position() {
        let lib = chain();
        let attrs = lib.resolve_attributes("C").unwrap();
        let names: Vec<_> = attrs.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, ["id", "x", "y", "z"]);
        assert_eq!(attrs[1].declared_type, "Amps");
    }

    #[test]
    fn two_step_type_resolution() {
        let lib = chain();
        assert_eq!(
            lib.attribute_kind("C", "x").unwrap(),
            Some(PrimitiveKind::Float)
        );
        assert_eq!(lib.attribute_kind("C", "nope").unwrap(), None);
        let bogus = CimAttribute::new("q", "Frobnitz");
        assert!(matches!(
            lib.resolve_type(&bogus),
            Err(ResolveError::UnknownType { .. })
        ));
    }

    #[test]
    fn invariants_are_enforced() {
        let cycle = CimLibrary::new(
            "t",
            [
                CimClass::new("X").extends("Y"),
                CimClass::new("Y").extends("X"),
            ],
            [],
        );
        assert!(matches!(cycle, Err(LibraryError::InheritanceCycle(_))));

        let self_loop = CimLibrary::new("t", [CimClass::new("X").extends("X")], []);
        assert!(matches!(self_loop, Err(LibraryError::InheritanceCycle(_))));

        let dangling = CimLibrary::new("t", [CimClass::new("X").extends("Nope")], []);
        assert!(matches!(
            dangling,
            Err(LibraryError::DanglingSuperclass { .. })
        ));

        let dup = CimLibrary::new("t", [CimClass::new("X"), CimClass::new("X")], []);
        assert_eq!(dup, Err(LibraryError::DuplicateClass("X".into())));

        let dup_attr = CimLibrary::new(
            "t",
            [CimClass::new("X").attr("a", "String").attr("a", "Float")],
            [],
        );
        assert!(matches!(
            dup_attr,
            Err(LibraryError::DuplicateAttribute { .. })
        ));

        let reserved = CimLibrary::new(
            "t",
            [],
            [CimDatatype {
                name: "Float".into(),
                value_kind: PrimitiveKind::Float,
            }],
        );
        assert!(matches!(
            reserved,
            Err(LibraryError::ReservedDatatypeName(_))
        ));
    }

    #[test]
    fn unknown_class() {
        assert_eq!(
            chain().resolve_attributes("Feeder"),
            Err(ResolveError::UnknownClass("Feeder".into()))
        );
    }
}
