//! No-reference point cloud quality assessment: multi-view projection, a
//! transformer global branch whose class attention steers a region-aware
//! convolutional local branch, and the training and evaluation harness.

pub mod autodiff;
pub mod cloudio;
pub mod datapack;
pub mod error;
pub mod evalkit;
pub mod feedback;
pub mod globalenc;
pub mod harness;
pub mod localenc;
pub mod model;
pub mod objective;
pub mod params;
pub mod projector;
pub mod tensor;

pub use cloudio::{canonicalize, load_ply, PointCloud};
pub use datapack::{kfold_split, FoldPlan, Manifest, ManifestEntry, RenderCache, Sample};
pub use error::{Error, Result};
pub use evalkit::{evaluate, MetricReport, QualityModel};
pub use harness::{CvReport, TrainConfig, TrainState};
pub use model::{Model, ModelConfig};
pub use projector::{project_views, stitch, RenderSettings, StitchedInput, ViewSet};
pub use tensor::Tensor;
