//! Structural causal simulator: ground-truth parameters, attribute
//! populations, ancestral sampling, the rank check and dataset files.

mod dataset;
mod params;
mod population;
mod rank;
mod simulate;

pub use dataset::{
    encode_record, params_hash, read_dataset, sample_dataset, write_dataset, DatasetBundle,
    Manifest, SplitCounts, SplitHashes, SplitPopulations, DATASET_SCHEMA_VERSION,
};
pub use params::{
    calibrate_label_bias, image_support, AttributeRelevance, Block, BlockTransition, Dims,
    Emission, LabelHead, ScmConfig, ScmParams,
};
pub use population::{PopulationConfig, PopulationSpec, ATTRIBUTE_NAMES};
pub use rank::{check_rank_condition, natural_parameters, BlockRank, RankReport, RANK_TOLERANCE};
pub use simulate::{latent_path, sample_sequence, sample_split, sequence_seed, Split};
