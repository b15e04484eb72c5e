//! Audio front end: log-Mel filterbanks with utterance-level mean
//! normalization, training crops, and the augmentation catalog.

mod augment;
mod fbank;
mod plan;
mod store;

pub use augment::{mix_noise, reverb, speed};
pub use store::{read_features, write_features, FEATURE_MAGIC};
pub use fbank::{cmn, crop, fbank, frames_for_seconds, FbankConfig, FeatureMatrix, Window};
pub use plan::{
    apply_plan_entry, build_plan, expand_manifest, expansion_counts, read_plan, write_plan,
    AugAssets, AugKind, AugmentationPlan, PlanEntry,
};
