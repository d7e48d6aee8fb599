//! Classical learners and the one-model-per-label wrapper.

pub mod forest;
pub mod gbm;
pub mod lda;
pub mod multioutput;
pub mod tree;

pub use forest::{forest_fit, ForestModel, ForestParams, ForestVariant};
pub use gbm::{gbm_fit, GbmLoss, GbmModel, GbmParams, GbmStage, LineSearch};
pub use lda::{lda_fit, LdaModel, DEFAULT_LAMBDA};
pub use multioutput::{
    load_model, multioutput_fit, multioutput_predict, save_model, BinaryModel, LearnerSpec, MultiOutputModel,
};
pub use tree::{tree_fit, tree_fit_rows, Criterion, CutRule, FeatureSubset, Tree, TreeNode, TreeParams};
