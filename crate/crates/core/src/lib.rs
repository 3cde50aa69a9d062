//! Gradient-boosted decision trees that can explain themselves in terms of
//! their training data.
//!
//! Besides training and prediction, the crate estimates how much every
//! training sample influenced a given test prediction, either by refitting
//! leaf values without the sample ([`influence::leaf_refit`],
//! [`influence::fast_leaf_refit`]) or by differentiating the prediction with
//! respect to the sample's weight ([`influence::leaf_influence`],
//! [`influence::fast_leaf_influence`]). The [`oracle`] module holds the
//! brute-force references every approximation is checked against, and
//! [`eval`] contains ranking metrics plus the experiment drivers.

pub mod dataio;
pub mod error;
pub mod eval;
pub mod gbdt;
pub mod influence;
pub mod loss;
pub mod oracle;
pub mod synthetic;

mod numfmt;

pub use dataio::{Dataset, Schema};
pub use error::{Error, Result};
pub use gbdt::{Ensemble, LeafFormula, TrainParams, TrainingTrace};
pub use influence::{InfluenceVector, RefitResult, UpdateSetStrategy};
pub use loss::LossKind;
