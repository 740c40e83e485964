//! Full-rank spatial covariance analysis (FCA) for multichannel source
//! separation, with a jointly diagonalized fast variant.

pub mod audio;
pub mod error;
pub mod evalkit;
pub mod fastfca;
pub mod fca;
pub mod init;
pub mod matcore;
pub mod pipeline;
pub mod scene;
pub mod stft;
pub mod wiener;

pub use audio::Audio;
pub use error::{Error, Result};
pub use evalkit::{Algorithm, EvalReport, OpCounters};
pub use init::InitMethod;
pub use pipeline::{BenchConfig, SeparationConfig};
pub use stft::StftConfig;
