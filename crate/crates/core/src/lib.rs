//! Core data model and engines for the factrix curation platform.
//!
//! Records are transcribed against [`template::Template`]s, persisted and
//! replicated by [`store`], curated without touching transcripts by
//! [`curation`], and turned into RDF by [`transform`].

pub mod canonical;
pub mod curation;
pub mod pipeline;
pub mod rdf;
pub mod record;
pub mod store;
pub mod synth;
pub mod template;
pub mod timestamp;
pub mod transform;

pub use timestamp::Timestamp;
