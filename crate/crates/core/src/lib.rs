//! Geometry side of the crown-shell pipeline: point and mesh kernels, ASCII
//! PLY, Chamfer and margin metrics, margin-line splines and boundary loops,
//! normal estimation with ball-pivoting reconstruction, context assembly and
//! a synthetic case generator.

pub mod context;
pub mod error;
pub mod geom;
pub mod marginline;
pub mod metrics;
pub mod ply;
pub mod recon;
pub mod synth;

pub use error::{GeomError, Result};
pub use geom::{NormalizationTransform, Point, PointCloud, TriangleMesh, Vector};
