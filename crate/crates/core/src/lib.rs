//! Neural-code image retrieval: descriptor handling, PCA and learned
//! projections, pair mining, brute-force nearest-neighbour search and the
//! standard retrieval evaluation protocols.

pub mod cli;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod fmt;
pub mod index;
pub mod io;
pub mod math;
pub mod pairs;
pub mod pca;
pub mod projection;
pub mod synth;
pub mod truth;

pub use descriptor::DescriptorSet;
pub use error::{Error, Result};
pub use eval::{
    average_precision, evaluate_holidays, evaluate_oxford, evaluate_ukb, ApVariant, EvalReport,
    HolidaysOptions, OkPolicy, OxfordOptions,
};
pub use index::{build_index, Hit, Index, RankedList};
pub use pairs::{
    greedy_unique_subset, mine_candidate_pairs, sample_negatives, MatchGraph, Pair, PairLabel,
    PairSet,
};
pub use pca::{apply_pca, fit_pca, fit_pca_with, ApplyOptions, PcaModel, PcaOptions};
pub use projection::{apply_projection, fit_projection, ProjectionModel, TrainConfig};
pub use synth::{generate, generate_nuisance_pairs, SynthDataset, SynthSpec};
pub use truth::{GroundTruth, GroupTruth, RankedTruth, Relevance, TruthFormat};
