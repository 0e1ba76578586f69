//! XMI reader for CIM class libraries.
//!
//! Element and attribute names are taken from [`XmiTags`] so exports from
//! other UML tools only need a different tag map, not different code.
//! Classes may be nested at any package depth.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    CimAttribute, CimClass, CimDatatype, CimLibrary, CimReference, LibraryError, Multiplicity,
    PrimitiveKind,
};
use crate::xml::{self, Element};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct XmiTags {
    /// Element that carries classes, datatypes and primitive types.
    pub class_element: String,
    /// Attribute whose value tells the element kind (`xmi:type`).
    pub kind_attribute: String,
    pub class_kind: String,
    pub datatype_kind: String,
    pub enumeration_kind: String,
    pub primitive_kind: String,
    pub id_attribute: String,
    pub idref_attribute: String,
    pub href_attribute: String,
    pub name_attribute: String,
    pub attribute_element: String,
    pub type_element: String,
    pub type_attribute: String,
    pub generalization_element: String,
    pub general_attribute: String,
    pub lower_bound_element: String,
    pub lower_bound_attribute: String,
    /// Attribute of a datatype that holds its value kind.
    pub datatype_value_attribute: String,
    pub version_element: String,
    pub version_attribute: String,
    /// Extra names accepted for primitive kinds.
    pub primitive_aliases: BTreeMap<String, PrimitiveKind>,
}

impl Default for XmiTags {
    fn default() -> Self {
        let aliases = [
            ("float", PrimitiveKind::Float),
            ("Double", PrimitiveKind::Float),
            ("double", PrimitiveKind::Float),
            ("Decimal", PrimitiveKind::Float),
            ("int", PrimitiveKind::Integer),
            ("integer", PrimitiveKind::Integer),
            ("Long", PrimitiveKind::Integer),
            ("boolean", PrimitiveKind::Boolean),
            ("bool", PrimitiveKind::Boolean),
            ("string", PrimitiveKind::String),
            ("dateTime", PrimitiveKind::DateTime),
        ];
        XmiTags {
            class_element: "packagedElement".into(),
            kind_attribute: "xmi:type".into(),
            class_kind: "uml:Class".into(),
            datatype_kind: "uml:DataType".into(),
            enumeration_kind: "uml:Enumeration".into(),
            primitive_kind: "uml:PrimitiveType".into(),
            id_attribute: "xmi:id".into(),
            idref_attribute: "xmi:idref".into(),
            href_attribute: "href".into(),
            name_attribute: "name".into(),
            attribute_element: "ownedAttribute".into(),
            type_element: "type".into(),
            type_attribute: "type".into(),
            generalization_element: "generalization".into(),
            general_attribute: "general".into(),
            lower_bound_element: "lowerValue".into(),
            lower_bound_attribute: "value".into(),
            datatype_value_attribute: "value".into(),
            version_element: "Model".into(),
            version_attribute: "version".into(),
            primitive_aliases: aliases
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }
}

impl XmiTags {
    fn primitive(&self, name: &str) -> Option<PrimitiveKind> {
        PrimitiveKind::from_name(name).or_else(|| self.primitive_aliases.get(name).copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Class,
    Datatype,
    Enumeration,
    Primitive,
}

/// What a type reference points at after id/name resolution.
enum TypeTarget {
    Class(String),
    Value(String),
}

pub fn load_library(xmi_bytes: &[u8]) -> Result<CimLibrary, LibraryError> {
    load_library_with(xmi_bytes, &XmiTags::default())
}

pub fn load_library_with(xmi_bytes: &[u8], tags: &XmiTags) -> Result<CimLibrary, LibraryError> {
    let root = xml::parse(xmi_bytes)?;

    let kind_of = |el: &Element| -> Option<Kind> {
        if el.local_name() != xml::local(&tags.class_element) {
            return None;
        }
        let kind = el.attr(&tags.kind_attribute)?;
        if kind == tags.class_kind {
            Some(Kind::Class)
        } else if kind == tags.datatype_kind {
            Some(Kind::Datatype)
        } else if kind == tags.enumeration_kind {
            Some(Kind::Enumeration)
        } else if kind == tags.primitive_kind {
            Some(Kind::Primitive)
        } else {
            None
        }
    };

    let typed: Vec<(Kind, &Element)> = root
        .descendants()
        .filter_map(|el| kind_of(el).map(|k| (k, el)))
        .collect();

    let mut by_id: HashMap<&str, (Kind, &str)> = HashMap::new();
    let mut class_names: HashMap<&str, ()> = HashMap::new();
    for (kind, el) in &typed {
        let name = el.attr(&tags.name_attribute).unwrap_or_default();
        if let Some(id) = el.attr(&tags.id_attribute) {
            by_id.insert(id, (*kind, name));
        }
        if *kind == Kind::Class {
            class_names.insert(name, ());
        }
    }

    let resolve_target = |raw: &str| -> TypeTarget {
        if let Some((kind, name)) = by_id.get(raw) {
            return match kind {
                Kind::Class => TypeTarget::Class(name.to_string()),
                Kind::Primitive => TypeTarget::Value(
                    tags.primitive(name)
                        .map_or_else(|| name.to_string(), |k| k.name().to_string()),
                ),
                Kind::Datatype | Kind::Enumeration => TypeTarget::Value(name.to_string()),
            };
        }
        // hrefs point into other documents: keep the fragment
        let name = raw.rsplit_once('#').map_or(raw, |(_, frag)| frag);
        if class_names.contains_key(name) {
            TypeTarget::Class(name.to_string())
        } else if let Some(kind) = tags.primitive(name) {
            TypeTarget::Value(kind.name().to_string())
        } else {
            TypeTarget::Value(name.to_string())
        }
    };

    let type_ref = |attr_el: &Element| -> Option<String> {
        for t in attr_el.children_named(xml::local(&tags.type_element)) {
            if let Some(r) = t
                .attr(&tags.idref_attribute)
                .or_else(|| t.attr(&tags.href_attribute))
            {
                return Some(r.to_string());
            }
        }
        attr_el.attr(&tags.type_attribute).map(str::to_string)
    };

    let multiplicity = |attr_el: &Element| -> Multiplicity {
        let lower = attr_el
            .children_named(xml::local(&tags.lower_bound_element))
            .find_map(|l| l.attr(&tags.lower_bound_attribute));
        match lower {
            Some(v) if v.trim() != "0" && !v.trim().is_empty() => Multiplicity::One,
            _ => Multiplicity::Optional,
        }
    };

    let mut classes = Vec::new();
    let mut datatypes = Vec::new();
    for (kind, el) in &typed {
        let name = el
            .attr(&tags.name_attribute)
            .unwrap_or_default()
            .to_string();
        match kind {
            Kind::Primitive => {}
            Kind::Enumeration => datatypes.push(CimDatatype {
                name,
                value_kind: PrimitiveKind::String,
            }),
            Kind::Datatype => {
                let value_attr = el
                    .children_named(xml::local(&tags.attribute_element))
                    .find(|a| {
                        a.attr(&tags.name_attribute) == Some(tags.datatype_value_attribute.as_str())
                    });
                let raw = value_attr.and_then(type_ref).unwrap_or_default();
                let kind_name = match resolve_target(&raw) {
                    TypeTarget::Value(v) => v,
                    TypeTarget::Class(c) => c,
                };
                let value_kind = PrimitiveKind::from_name(&kind_name).ok_or_else(|| {
                    LibraryError::UnknownPrimitive {
                        datatype: name.clone(),
                        kind: kind_name.clone(),
                    }
                })?;
                datatypes.push(CimDatatype { name, value_kind });
            }
            Kind::Class => {
                let mut class = CimClass::new(name.clone());
                let generals: Vec<&str> = el
                    .children_named(xml::local(&tags.generalization_element))
                    .filter_map(|g| g.attr(&tags.general_attribute))
                    .collect();
                match generals.as_slice() {
                    [] => {}
                    [general] => {
                        let sup = match by_id.get(general) {
                            Some((Kind::Class, sup)) => sup.to_string(),
                            _ => {
                                return Err(LibraryError::DanglingSuperclass {
                                    class: name,
                                    superclass: general.to_string(),
                                })
                            }
                        };
                        class.superclass = Some(sup);
                    }
                    _ => return Err(LibraryError::MultipleSuperclasses(name)),
                }
                for attr_el in el.children_named(xml::local(&tags.attribute_element)) {
                    let attr_name = attr_el
                        .attr(&tags.name_attribute)
                        .unwrap_or_default()
                        .to_string();
                    let raw = type_ref(attr_el).unwrap_or_default();
                    match resolve_target(&raw) {
                        TypeTarget::Class(target) => class.references.push(CimReference {
                            role: attr_name,
                            target,
                        }),
                        TypeTarget::Value(declared_type) => {
                            class.own_attributes.push(CimAttribute {
                                name: attr_name,
                                declared_type,
                                multiplicity: multiplicity(attr_el),
                            })
                        }
                    }
                }
                classes.push(class);
            }
        }
    }

    let version = root
        .descendants()
        .filter(|el| el.local_name() == xml::local(&tags.version_element))
        .find_map(|el| el.attr(&tags.version_attribute))
        .map(str::to_string)
        .unwrap_or_else(|| format!("sha256:{}", hex::encode(Sha256::digest(xmi_bytes))));

    CimLibrary::new(version, classes, datatypes)
}
