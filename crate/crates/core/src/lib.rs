//! Learning to rank with the Plackett-Luce likelihood.
//!
//! The main learner boosts least-squares regression trees whose leaf outputs
//! are Newton steps on the top-K Plackett-Luce log-likelihood of sampled
//! ground-truth permutations. Alongside it live three squared-loss MART
//! variants, a linear ListMLE model trained with L-BFGS, a LETOR parser, and
//! NDCG@K / ERR evaluation.

pub mod booster;
pub mod data;
pub mod error;
pub mod lbfgs;
pub mod listmle;
pub mod metrics;
pub mod permutation;
pub mod pl_objective;
pub mod synth;
pub mod tree;

pub use booster::{train, train_with_validation, Loss, TrainConfig, TrainTrace};
pub use data::{parse_dataset, Dataset, Document, FeatureMatrix, QueryGroup};
pub use error::{Error, Result};
pub use listmle::{train_linear, LinearModel};
pub use metrics::{evaluate, DegeneratePolicy, EvalReport};
pub use permutation::{ContextSet, PermutationSet};
pub use tree::{Ensemble, EnsembleMeta, RegressionTree, TreeNode};
