//! Per-mention combination of several entity-linking systems.
//!
//! Outputs of the individual systems are aligned into mention groups,
//! described by surface, mention and document features, and unified either
//! by a learned selector ([`metael`]) or by one of the unsupervised policies
//! in [`baselines`]. [`evaluation`] scores the results.

pub mod alignment;
pub mod baselines;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod learners;
pub mod metael;
pub mod seed;
pub mod synth;

pub use alignment::{agreement_statistics, build_mention_groups, AgreementReport, AlignmentMode, MentionGroup};
pub use baselines::{apply_baseline, BaselineKind, BaselinePolicy, VoteNormalization};
pub use corpus::{
    canonicalize_entity, AnnotationSet, CanonicalEntityId, Corpus, Document, EntityAnnotation, GroundTruth, Mention,
};
pub use error::{Error, Result};
pub use evaluation::{el_prf, paired_t_test, PrfScore, SignificanceResult};
pub use features::{CandidateDictionary, Feature, FeatureMask, SystemTrainingStats};
pub use metael::{annotate_loose, annotate_strict, train_metael, MetaElConfig, MetaElModel, UnifiedAnnotationSet};
