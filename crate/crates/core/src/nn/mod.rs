//! Toy-scale trainable compensation network and the reverse-mode autodiff
//! it runs on.

pub mod blocks;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod params;
pub mod sna;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{gradcheck, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamStore};
pub use sna::{ModelConfig, Mode, Sna, SnaInput, SnaPrediction, SnaTarget};
pub use tensor::Tensor;
pub use train::{train, EpochLog, LossSummary, Sample, TrainConfig, TrainReport};
