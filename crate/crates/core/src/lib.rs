//! Entity resolution: extraction, candidate generation, matching,
//! clustering and profile assembly, in batch and incremental form.

pub mod clustering;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod jsonl;
pub mod matching;
pub mod model;
pub mod pipeline;
pub mod profile;
pub mod similarity;
pub mod space;
pub mod store;

pub use clustering::{connected_components, unique_mapping, ClusterState, ClustererKind};
pub use config::{Mode, RuntimeConfig};
pub use error::{Error, Result};
pub use matching::{MatcherConfig, MatcherKind};
pub use model::{
    make_reference_id, AttributeValue, CandidateGroup, Cluster, ClusterPartition, ComparisonSpace, EntityProfile,
    EntityReference, GroundTruth, InformationRecord, MatchEdge, MatchLabel, Provenance, Representation,
    SourceDescriptor, SourceKind,
};
pub use pipeline::{
    resolve_references, run_batch, BatchOutput, IncrementalResolver, ProfileSelector, RecordInput, RunReport,
};
pub use profile::AssemblyKind;
pub use similarity::SimilarityKind;
pub use space::SpaceStrategy;
pub use store::{ReferenceStore, StoreBackend};
