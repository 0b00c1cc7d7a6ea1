//! Dataset loading, filtering, splitting, and synthesis.

mod features;
mod interactions;
mod kcore;
mod prepared;
mod split;
mod synthetic;

pub use features::{load_features, save_features, FeatureMatrix};
pub use interactions::{load_interactions, InteractionTable};
pub use kcore::{kcore_filter, KcoreResult};
pub use prepared::{load_prepared, write_prepared, PreparedDataset, SplitManifest};
pub use split::{split_dataset, DatasetSplit};
pub use synthetic::generate_synthetic;

use serde::{Deserialize, Serialize};

/// One information channel per item. Behavior is the interaction-derived ID
/// signal; textual and visual are frozen content feature matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Behavior,
    Textual,
    Visual,
}

impl Modality {
    pub fn name(&self) -> &'static str {
        match self {
            Modality::Behavior => "behavior",
            Modality::Textual => "textual",
            Modality::Visual => "visual",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
