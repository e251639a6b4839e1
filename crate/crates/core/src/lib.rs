pub mod augment;
pub mod cloud;
pub mod csf;
pub mod error;
pub mod features;
pub mod las;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod prediction;
pub mod pseudolabel;
pub mod taxonomy;
pub mod tiling;

pub use cloud::PointCloud;
pub use error::{Error, ErrorFamily, Result};
pub use prediction::PredictionSet;
pub use taxonomy::ClassId;
