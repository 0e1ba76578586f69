//! Test-only generators and oracles shared by the property tests and the
//! gateway acceptance suite. Nothing here calls the inheritance walk, the
//! planner or the catalog code it is used to check.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use cimgw_core::cim::{CimClass, CimDatatype, CimLibrary, PrimitiveKind};
use cimgw_core::topology::{ElementInstance, Mrid, ReferenceEdge, TopologyDocument};
use rand::seq::IndexedRandom;
use rand::Rng;

pub const LIB_A: &str = include_str!("../../../../fixtures/lib-a.xmi");
pub const TOPO_1: &str = include_str!("../../../../fixtures/topo-1.rdf");

const ATTR_POOL: [&str; 8] = ["a0", "a1", "a2", "a3", "a4", "a5", "a6", "a7"];
const DATATYPES: [(&str, PrimitiveKind); 3] = [
    ("Amps", PrimitiveKind::Float),
    ("Count", PrimitiveKind::Integer),
    ("Label", PrimitiveKind::String),
];

/// Random single-inheritance hierarchy: class i may only extend a class j < i,
/// so the result is acyclic by construction. Attribute names come from a
/// small pool to force shadowing.
pub fn random_library(
    rng: &mut impl Rng,
    max_classes: usize,
    max_attrs: usize,
    version: &str,
) -> CimLibrary {
    let n = rng.random_range(1..=max_classes);
    let types: Vec<String> = PrimitiveKind::ALL
        .iter()
        .map(|k| k.name().to_string())
        .chain(DATATYPES.iter().map(|(n, _)| n.to_string()))
        .collect();
    let mut classes = Vec::with_capacity(n);
    for i in 0..n {
        let mut class = CimClass::new(format!("C{i}"));
        if i > 0 && rng.random_bool(0.8) {
            class = class.extends(format!("C{}", rng.random_range(0..i)));
        }
        let mut names: Vec<&str> = ATTR_POOL.to_vec();
        let k = rng.random_range(0..=max_attrs.min(names.len()));
        for _ in 0..k {
            let idx = rng.random_range(0..names.len());
            let name = names.swap_remove(idx);
            class = class.attr(name, types.choose(rng).unwrap().clone());
        }
        if i > 0 && rng.random_bool(0.3) {
            class = class.reference(
                format!("r{}", rng.random_range(0..3)),
                format!("C{}", rng.random_range(0..i)),
            );
        }
        classes.push(class);
    }
    let datatypes = DATATYPES.iter().map(|(n, k)| CimDatatype {
        name: n.to_string(),
        value_kind: *k,
    });
    CimLibrary::new(version, classes, datatypes).expect("generated library is valid")
}

/// Brute-force resolution: transitive closure of the parent relation by
/// Warshall's algorithm, ancestors ordered by their own ancestor count
/// (depth), then attributes collected root first with the deepest
/// declaration winning.
pub fn oracle_resolve(lib: &CimLibrary, class: &str) -> Vec<(String, String)> {
    let names: Vec<&String> = lib.classes().keys().collect();
    let index: BTreeMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let n = names.len();
    let mut reach = vec![vec![false; n]; n];
    for (i, name) in names.iter().enumerate() {
        if let Some(sup) = &lib.classes()[*name].superclass {
            reach[i][index[sup.as_str()]] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                let via = reach[k].clone();
                for (j, r) in via.into_iter().enumerate() {
                    reach[i][j] |= r;
                }
            }
        }
    }
    let c = index[class];
    let depth = |i: usize| reach[i].iter().filter(|x| **x).count();
    let mut line: Vec<usize> = (0..n).filter(|&j| reach[c][j]).collect();
    line.push(c);
    line.sort_by_key(|&j| depth(j));

    let mut order: Vec<String> = Vec::new();
    let mut types: BTreeMap<String, String> = BTreeMap::new();
    for j in line {
        for a in &lib.classes()[names[j]].own_attributes {
            if !types.contains_key(&a.name) {
                order.push(a.name.clone());
            }
            types.insert(a.name.clone(), a.declared_type.clone());
        }
    }
    order
        .into_iter()
        .map(|name| (name.clone(), types[&name].clone()))
        .collect()
}

/// Conforming literal for a declared type of the generated libraries.
pub fn literal_for(lib: &CimLibrary, declared_type: &str, rng: &mut impl Rng) -> String {
    let kind = PrimitiveKind::from_name(declared_type)
        .or_else(|| lib.datatypes().get(declared_type).map(|d| d.value_kind))
        .expect("generated types resolve");
    match kind {
        PrimitiveKind::Float => format!("{}", rng.random_range(-1000.0..1000.0f64)),
        PrimitiveKind::Integer => rng.random_range(-50i64..50).to_string(),
        PrimitiveKind::Boolean => rng.random_bool(0.5).to_string(),
        PrimitiveKind::String => format!("s{}", rng.random_range(0..100)),
        PrimitiveKind::DateTime => "2024-05-01T10:00:00Z".to_string(),
    }
}

/// Random document over a library: elements of random classes, a random
/// subset of attributes set, and reference edges on declared roles.
pub fn random_topology(
    lib: &CimLibrary,
    rng: &mut impl Rng,
    max_elements: usize,
) -> TopologyDocument {
    let classes: Vec<&String> = lib.classes().keys().collect();
    let n = rng.random_range(0..=max_elements);
    let mut elements = Vec::new();
    let mut edges = Vec::new();
    for i in 0..n {
        let class = classes.choose(rng).unwrap();
        let mrid = Mrid::new(format!("E-{i:03}")).unwrap();
        let mut el = ElementInstance::new(mrid.clone(), class.as_str());
        for attr in lib.resolve_attributes(class).unwrap() {
            if rng.random_bool(0.6) {
                let lit = literal_for(lib, &attr.declared_type, rng);
                el = el.with(attr.name, lit);
            }
        }
        for r in lib.resolve_references(class).unwrap() {
            if rng.random_bool(0.7) {
                edges.push(ReferenceEdge {
                    from: mrid.clone(),
                    role: r.role,
                    to: Mrid::new(format!("E-{:03}", rng.random_range(0..n.max(1)))).unwrap(),
                });
            }
        }
        elements.push(el);
    }
    TopologyDocument::from_parts(elements, edges).expect("generated document is valid")
}

/// Set-level summary of a catalog: table -> {(column, kind)}.
pub fn catalog_shape(
    catalog: &cimgw_core::schema::StorageCatalog,
) -> BTreeMap<String, BTreeSet<(String, cimgw_core::schema::ColumnKind)>> {
    catalog
        .tables
        .iter()
        .map(|(name, t)| {
            (
                name.clone(),
                t.columns.iter().map(|c| (c.name.clone(), c.kind)).collect(),
            )
        })
        .collect()
}

const SWITCH_NORMAL_OPEN: &str = r#"        <ownedAttribute xmi:type="uml:Property" xmi:id="A_Switch_normalOpen" name="normalOpen">
          <type xmi:idref="PT_Boolean"/>
        </ownedAttribute>
"#;

const DISCONNECTOR: &str = r#"      <packagedElement xmi:type="uml:Class" xmi:id="C_Disconnector" name="Disconnector">
        <generalization xmi:type="uml:Generalization" xmi:id="G_DIS" general="C_Switch"/>
      </packagedElement>
"#;

const SWITCH_LOCKED: &str = r#"        <ownedAttribute xmi:type="uml:Property" xmi:id="A_Switch_locked" name="locked">
          <type xmi:idref="PT_Boolean"/>
        </ownedAttribute>
"#;

fn edited(find: &str, replace: &str, version: &str) -> String {
    assert!(LIB_A.contains(find), "fixture anchor missing");
    LIB_A.replacen(find, replace, 1).replacen(
        "version=\"lib-a-1\"",
        &format!("version=\"{version}\""),
        1,
    )
}

/// LIB-A plus a Disconnector subclass of Switch.
pub fn lib_a_with_disconnector(version: &str) -> String {
    let anchor = "    </packagedElement>\n  </uml:Model>";
    edited(anchor, &format!("{DISCONNECTOR}{anchor}"), version)
}

/// LIB-A with Switch.normalOpen removed.
pub fn lib_a_without_normal_open(version: &str) -> String {
    edited(SWITCH_NORMAL_OPEN, "", version)
}

/// LIB-A with a Boolean Switch.locked added.
pub fn lib_a_with_locked(version: &str) -> String {
    edited(
        SWITCH_NORMAL_OPEN,
        &format!("{SWITCH_NORMAL_OPEN}{SWITCH_LOCKED}"),
        version,
    )
}
