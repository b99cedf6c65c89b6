//! Event data, Hawkes model parameters, the integrated process and losses.

pub mod events;
pub mod integrate;
pub mod kernel;
pub mod loss;
pub mod model;

pub use events::{EventStream, ExperimentData, MultiExperimentData};
pub use integrate::{
    event_regressors, integrated_path, integrated_process, PathTable, QuadratureGrid,
};
pub use kernel::{Kernel, Link};
pub use loss::{
    event_grams, least_squares_loss, negloglik_loss, negloglik_with_gradient, LikelihoodDesign,
    Moments,
};
pub use model::{intensity, ExperimentModel, MultiModel, UnitParams};
