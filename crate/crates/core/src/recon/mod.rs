//! Surface reconstruction of predicted shells: PCA normals with spanning-tree
//! orientation, then multi-radius ball pivoting.

mod bpa;
mod normals;

pub use bpa::{ball_center, ball_pivot, BpaConfig, BpaReport, Reconstruction};
pub use normals::{estimate_normals, OrientedCloud};
