//! Proximal policy optimisation with a categorical policy, written out by hand:
//! small MLPs with manual backpropagation, Adam, and the clipped surrogate objective.

mod adam;
mod checkpoint;
mod mlp;
mod objective;
mod policy;
mod train;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use mlp::{Activation, ForwardCache, Mlp};
pub use objective::{
    advantages, compute_gae, compute_returns, compute_returns_bootstrapped, normalize,
    ppo_objective, Coefficients, ObjectiveGrad, ObjectiveTerms, RolloutBatch,
};
pub use policy::Categorical;
pub use train::{
    train, train_agent, write_curve_csv, Agent, AgentSpec, CurvePoint, EarlyStop, Environment,
    TrainOutcome, Transition,
};
