//! Neural network definitions: parameter storage, the waveform generator,
//! the sub-discriminator ensemble, and the watermark detector.

pub mod detector;
pub mod discriminator;
pub mod generator;
pub mod params;

pub use detector::{Detector, DetectorConfig};
pub use discriminator::{DiscOutput, DiscriminatorConfig, Ensemble};
pub use generator::{Generator, GeneratorConfig};
pub use params::{Binding, ParamId, ParamStore};

/// Structural layer tags, exposed so tests can scan an instantiated model
/// for forbidden layer types (the detector must contain no normalization or
/// dropout).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv1d,
    ConvTranspose1d,
    Conv2d,
    LeakyRelu,
    Tanh,
    Resample,
    LogMel,
    GlobalMeanPool,
    BatchNorm,
    Dropout,
}
