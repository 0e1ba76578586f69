//! Model layer of the CIM gateway.
//!
//! - [`cim`]: class library loaded from XMI, with inheritance-aware
//!   attribute and type resolution.
//! - [`topology`]: CIM/XML/RDF documents, validation against a library,
//!   and document diffs.
//! - [`schema`]: relational schema planning and drift detection.
//! - [`mapping`]: tag manifest to (mRID, attribute) bindings.
//!
//! Everything here is pure and `Send + Sync`; storage and networking live
//! in the gateway crate.

pub mod cim;
pub mod literal;
pub mod mapping;
pub mod schema;
pub mod topology;
mod xml;

pub use cim::{load_library, CimLibrary, PrimitiveKind};
pub use topology::{parse_topology, Mrid, TopologyDocument};
