//! Synthetic data, the layered avatar model, and the fitting loop.

pub mod avatar;
pub mod checkpoint;
pub mod config;
pub mod fit;
pub mod metrics;
pub mod optim;
pub mod synth;

pub use avatar::{Avatar, Rig};
pub use checkpoint::Checkpoint;
pub use config::{Config, ModelConfig, OptimConfig, TrainConfig};
pub use fit::{compute_step, evaluate, fit, fit_from, initial_checkpoint, EvalReport, LossRow};
pub use metrics::{psnr, ssim_metric};
pub use optim::{lr_at, Group, OptimizerState, ScheduleSpec};
pub use synth::{synth_scene, SynthParams, SyntheticScene};
