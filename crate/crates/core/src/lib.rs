pub mod corpus;
pub mod engine;
pub mod error;
pub mod fsutil;
pub mod geom;
pub mod harness;
pub mod manifest;
pub mod motif;
pub mod raster;
pub mod rasterize;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use raster::RasterImage;
pub use scalar::Scalar;

/// Training precision.
pub type Real = f32;
pub type ImageTensor = engine::Tensor<Real>;
pub type Models = engine::ModelBundle<Real>;
pub type Trainer = engine::TrainState<Real>;
/// Double precision, for gradient checks.
pub type Models64 = engine::ModelBundle<f64>;
