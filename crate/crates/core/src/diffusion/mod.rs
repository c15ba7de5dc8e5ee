//! Noise schedules, the forward noising process, the noise-prediction loss,
//! ancestral sampling and bias-aware guided sampling.

mod condition;
mod process;
mod sampler;
mod schedule;

pub use condition::{stack_conditions, ConditionInput};
pub use process::{q_sample, q_sample_batch, training_loss, NoisePredictor};
pub use sampler::{
    bgs_step, ddpm_step, guidance_gradient, sample, sample_batch, BiasSpace, GuidanceConfig,
    ReverseMode,
};
pub use schedule::{NoiseSchedule, ScheduleKind};
