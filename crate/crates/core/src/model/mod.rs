//! The spiking event classifier and its building blocks.

mod attention;
mod checkpoint;
mod config;
mod count;
mod layers;
mod network;
mod saliency;
mod ssm;

pub use attention::{window_reshape, window_reverse, ATTENTION_EPS};
pub use checkpoint::{Checkpoint, Manifest, ParamEntry, CHECKPOINT_FORMAT};
pub use config::{Ablation, ModelConfig, Preset};
pub use count::{count_params_flops, CountReport};
pub use layers::{linear_params, Linear};
pub use network::{argmax_rows, ForwardOutput, Mode, SpikMamba};
pub use saliency::{normalize_frames, token_saliency, upsample_nearest};
pub use ssm::{selective_scan, zoh_discretize, SERIES_GUARD};
