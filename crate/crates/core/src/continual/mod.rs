//! Continual-learning strategies: replay buffer, loss terms, EWC and the
//! training protocol that runs a strategy over a task stream.

mod buffer;
mod ewc;
mod losses;
mod strategy;
mod trainer;

pub use buffer::{BufferItem, ReplayBuffer};
pub use ewc::{fisher_from_gradients, EwcState};
pub use losses::{
    current_cross_entropy, er_loss, gs_loss, local_structure_vector, ls_loss, output_distill_loss, output_distill_rows,
    replay_cross_entropy, sample_structure_nodes, total_loss, CurrentItem, LossBreakdown, LossWeights, OutputDistill,
    OutputDistillMode, StepBatch, StepContext, Targets,
};
pub use strategy::{Recipe, Strategy};
pub use trainer::{run_stream, RunOutcome, TrainConfig};
