//! Ontology-aware multilabel learning over supplied feature vectors.
//!
//! The crate covers the full pipeline: a label ontology with hierarchical and
//! mutually exclusive relations ([`ontology`]), rule-based label mining from
//! bookmarked report sentences ([`textmine`]), sample storage and a synthetic
//! generator ([`dataset`]), a small differentiable scorer with a score
//! propagation layer and an embedding head ([`model`]), the loss family used
//! to train it ([`losses`]), an SGD trainer ([`trainer`]) and evaluation
//! ([`eval`]).

pub mod dataset;
pub mod eval;
pub mod labelset;
pub mod losses;
pub mod model;
pub mod ontology;
pub mod textmine;
pub mod trainer;

pub use labelset::LabelSet;
pub use ontology::{Category, LabelOntology, OntologyError, OntologySpec, ValidationReport};
