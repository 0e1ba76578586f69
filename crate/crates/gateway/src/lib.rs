//! A self-adapting CIM gateway: ingests a local SCADA node's CIM/XML/RDF
//! topology, derives and migrates relational storage from a CIM class
//! library, binds local tags to cloud identifiers, keeps live values in
//! sync, and serves datasheets and a change feed to an adaptive UI.
//!
//! The bundled [`sim`] node stands in for the local SCADA side.

pub mod cli;
pub mod clock;
pub mod config;
pub mod events;
pub mod gateway;
pub mod http;
pub mod pipeline;
pub mod runtime;
pub mod server;
pub mod sim;
pub mod source;
pub mod store;
pub mod sync;

pub use gateway::{Gateway, GatewayError, GatewayState, Settings, UiConfig};
pub use pipeline::{IngestError, ReloadResult, Stage};
