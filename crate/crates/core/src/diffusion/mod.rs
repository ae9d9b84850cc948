//! Score-SDE machinery shared by the pitch and Mel stages.
//!
//! The forward process pulls a sample towards a data-driven prior `z`
//! while adding noise; the reverse sampler walks it back using a score
//! estimate.

mod forward;
mod mask;
mod sampler;
mod schedule;

pub use forward::{
    analytic_conditional_score, draw_time, dsm_draw, dsm_loss, sample_forward, sample_forward_with,
    DiffusionPrior, DsmDraw, DsmLoss, T_EPS,
};
pub use mask::{apply_frequency_mask, masked_bins};
pub use sampler::{reverse_sample, SampleOutput, SamplerConfig, StepRate, TrajectoryPoint};
pub use schedule::{int_beta, loss_weight, marginal_params, Marginal, NoiseSchedule};
