//! Probability primitives shared by the detector, the inference engine and
//! the experiment harness.

pub mod data;
pub mod interval;
pub mod linalg;
pub mod normal;
pub mod testing;

pub use data::{sample_dataset, sample_dataset_with, BlockCovariance, CovBlock, GaussianDataset, NoiseKind, NoiseSpec};
pub use interval::{Interval, TruncationRegion};
pub use normal::{gaussian_interval_mass, truncated_two_sided_p};
