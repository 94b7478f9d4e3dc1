pub mod alpha_net;
pub mod autograd;
pub mod clipsim;
pub mod config;
pub mod engine;
pub mod error;
pub mod imageio;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod refine;
pub mod tensor;
pub mod trainer;
pub mod trimap_prop;
pub mod types;

pub use config::{Config, ModelConfig, Preset};
pub use error::{OtvmError, Result};
pub use model::Otvm;
pub use tensor::Tensor;
pub use types::{AlphaMap, Frame, TrimapClass, TrimapSoft};
