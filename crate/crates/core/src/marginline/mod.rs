//! Margin lines: closed spline fitting, arc-length resampling, ground-truth
//! densification and extraction from the boundary of a reconstructed shell.

mod boundary;
mod spline;

pub use boundary::{boundary_edges, boundary_loops, select_margin_loop, BoundaryLoop};
pub use spline::{fit_closed_spline, ClosedSpline};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::geom::{Point, PointCloud, TriangleMesh};
use crate::ply;

/// Default number of arc-length samples along a margin line.
pub const DEFAULT_MARGIN_SAMPLES: usize = 1000;

/// A closed margin curve: its control polyline and a uniform resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginLine {
    pub control_points: Vec<Point>,
    pub samples: PointCloud,
}

impl MarginLine {
    /// Fits the control loop and resamples it to `n` points.
    pub fn from_polyline(polyline: &[Point], n: usize) -> Result<Self> {
        let spline = fit_closed_spline(polyline)?;
        let samples = spline.resample_arclength(n)?;
        Ok(Self {
            control_points: spline.control_points().to_vec(),
            samples,
        })
    }

    pub fn sidecar(&self) -> MarginSidecar {
        MarginSidecar {
            closed: true,
            n_control: self.control_points.len(),
            n_samples: self.samples.len(),
        }
    }
}

/// JSON companion of a margin PLY file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginSidecar {
    pub closed: bool,
    pub n_control: usize,
    pub n_samples: usize,
}

/// `n` equally spaced points (by arc length) along the spline.
pub fn resample_arclength(spline: &ClosedSpline, n: usize) -> Result<PointCloud> {
    spline.resample_arclength(n)
}

/// Ground-truth shell with the margin samples appended. Duplicates are kept:
/// the extra density along the margin is the point.
pub fn densify_ground_truth(shell: &PointCloud, margin: &PointCloud) -> PointCloud {
    let mut out = PointCloud::new(Vec::with_capacity(shell.len() + margin.len()));
    out.extend_from(shell);
    out.extend_from(margin);
    out
}

/// Extracts the margin of an open shell mesh: the longest boundary loop,
/// spline-fitted in cycle order and resampled to `n` points.
pub fn extract_margin_from_mesh(mesh: &TriangleMesh, n: usize) -> Result<PointCloud> {
    let loops = boundary_loops(mesh)?;
    let chosen = select_margin_loop(&loops).ok_or(GeomError::NoBoundary)?;
    let mut polyline: Vec<Point> = chosen.vertices.iter().map(|&v| mesh.vertices[v]).collect();
    // short loops (a lone triangle) are refined by edge midpoints until the
    // spline is well posed
    while spline::distinct_count(&polyline) < 4 {
        if polyline.len() >= 1 << 12 {
            return Err(GeomError::Topology("margin loop collapses to fewer than 4 distinct points".into()));
        }
        polyline = refine_loop(&polyline);
    }
    fit_closed_spline(&polyline)?.resample_arclength(n)
}

fn refine_loop(points: &[Point]) -> Vec<Point> {
    let n = points.len();
    (0..n)
        .flat_map(|i| {
            let a = points[i];
            let b = points[(i + 1) % n];
            [a, Point::from((a.coords + b.coords) * 0.5)]
        })
        .collect()
}

/// Writes `<stem>.ply` (ordered samples) and `<stem>.json` (sidecar).
pub fn write_margin(dir: &Path, stem: &str, samples: &PointCloud, n_control: usize) -> Result<()> {
    ply::write_point_cloud(dir.join(format!("{stem}.ply")), samples)?;
    let sidecar = MarginSidecar {
        closed: true,
        n_control,
        n_samples: samples.len(),
    };
    let path = dir.join(format!("{stem}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| GeomError::io(&path, e))
}
