//! Tree-constrained pointer generator: the biasing head, its gradients and
//! the frozen-base training loop.

pub mod check;
pub mod grad;
pub mod optim;
pub mod params;
pub mod step;
pub mod train;

pub use grad::{backward, batch_loss, step_target_prob, Gradients, TrainStep};
pub use optim::{Adam, TriStageSchedule};
pub use params::{Checkpoint, TcpgenParams};
pub use step::{sequence_nll, tcpgen_step, StepOptions, StepOutput};
pub use train::{train, EpochLog, TrainConfig, TrainLog};
