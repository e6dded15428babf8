use crate::error::{GeomError, Result};
use crate::geom::{Point, PointCloud, Vector};

/// Interpolating periodic cubic spline with uniform parameterization.
///
/// Segment `i` runs from control point `i` (parameter `t = i`) to control
/// point `i + 1` (wrapping), so the full loop spans `t ∈ [0, n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedSpline {
    control: Vec<Point>,
    second: Vec<Vector>,
    segment_lengths: Vec<f64>,
    cumulative: Vec<f64>,
}

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// Number of distinct positions (exact comparison).
pub(crate) fn distinct_count(points: &[Point]) -> usize {
    let mut keys: Vec<[u64; 3]> = points
        .iter()
        .map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Fits a closed interpolating cubic spline through an ordered loop.
///
/// A repeated closing point (last == first) is dropped. The ordering is
/// trusted as given: self-intersecting loops are not detected.
pub fn fit_closed_spline(polyline: &[Point]) -> Result<ClosedSpline> {
    let mut control = polyline.to_vec();
    if control.len() > 1 && control.first() == control.last() {
        control.pop();
    }
    if distinct_count(&control) < 4 {
        return Err(GeomError::DegenerateCloud(format!(
            "closed spline needs at least 4 distinct points, got {}",
            distinct_count(&control)
        )));
    }
    if let Some(p) = control.iter().find(|p| !p.coords.iter().all(|c| c.is_finite())) {
        return Err(GeomError::Input(format!("non-finite control point {p:?}")));
    }
    let n = control.len();
    let rhs: Vec<Vector> = (0..n)
        .map(|i| {
            let prev = control[(i + n - 1) % n].coords;
            let next = control[(i + 1) % n].coords;
            (next - control[i].coords * 2.0 + prev) * 6.0
        })
        .collect();
    let second = solve_cyclic(&rhs);
    let mut spline = ClosedSpline {
        control,
        second,
        segment_lengths: Vec::new(),
        cumulative: Vec::new(),
    };
    spline.segment_lengths = (0..n).map(|i| spline.segment_arc(i, 0.0, 1.0)).collect();
    spline.cumulative = std::iter::once(0.0)
        .chain(spline.segment_lengths.iter().scan(0.0, |acc, l| {
            *acc += l;
            Some(*acc)
        }))
        .collect();
    Ok(spline)
}

/// Solves the cyclic system `M[i-1] + 4 M[i] + M[i+1] = r[i]`
/// (Sherman–Morrison on top of the Thomas algorithm).
fn solve_cyclic(r: &[Vector]) -> Vec<Vector> {
    let n = r.len();
    let (alpha, beta) = (1.0, 1.0);
    let gamma = -4.0;
    let mut diag = vec![4.0; n];
    diag[0] -= gamma;
    diag[n - 1] -= alpha * beta / gamma;
    let x = thomas(&diag, r);
    let mut u = vec![Vector::zeros(); n];
    u[0] = Vector::repeat(gamma);
    u[n - 1] = Vector::repeat(alpha);
    let z = thomas(&diag, &u);
    (0..n)
        .map(|i| {
            let mut out = x[i];
            for a in 0..3 {
                let fact = (x[0][a] + beta * x[n - 1][a] / gamma) / (1.0 + z[0][a] + beta * z[n - 1][a] / gamma);
                out[a] -= fact * z[i][a];
            }
            out
        })
        .collect()
}

/// Tridiagonal solve with unit off-diagonals.
fn thomas(diag: &[f64], r: &[Vector]) -> Vec<Vector> {
    let n = diag.len();
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![Vector::zeros(); n];
    c_prime[0] = 1.0 / diag[0];
    d_prime[0] = r[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - c_prime[i - 1];
        c_prime[i] = 1.0 / m;
        d_prime[i] = (r[i] - d_prime[i - 1]) / m;
    }
    let mut x = vec![Vector::zeros(); n];
    x[n - 1] = d_prime[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d_prime[i] - x[i + 1] * c_prime[i];
    }
    x
}

impl ClosedSpline {
    pub fn control_points(&self) -> &[Point] {
        &self.control
    }

    pub fn segment_count(&self) -> usize {
        self.control.len()
    }

    pub fn total_length(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    fn split(&self, t: f64) -> (usize, f64) {
        let n = self.control.len();
        let t = t.rem_euclid(n as f64);
        let i = (t.floor() as usize).min(n - 1);
        (i, t - i as f64)
    }

    fn seg_eval(&self, i: usize, u: f64) -> Point {
        let n = self.control.len();
        let j = (i + 1) % n;
        let v = 1.0 - u;
        let p = self.control[i].coords * v
            + self.control[j].coords * u
            + (self.second[i] * (v * v * v - v) + self.second[j] * (u * u * u - u)) / 6.0;
        Point::from(p)
    }

    fn seg_deriv(&self, i: usize, u: f64) -> Vector {
        let n = self.control.len();
        let j = (i + 1) % n;
        let v = 1.0 - u;
        self.control[j].coords - self.control[i].coords
            + (self.second[i] * (1.0 - 3.0 * v * v) + self.second[j] * (3.0 * u * u - 1.0)) / 6.0
    }

    /// Position at parameter `t` (wraps modulo the control count).
    pub fn eval(&self, t: f64) -> Point {
        let (i, u) = self.split(t);
        self.seg_eval(i, u)
    }

    pub fn derivative(&self, t: f64) -> Vector {
        let (i, u) = self.split(t);
        self.seg_deriv(i, u)
    }

    fn gl5(&self, i: usize, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        GL5_NODES
            .iter()
            .zip(GL5_WEIGHTS)
            .map(|(&x, w)| w * self.seg_deriv(i, mid + half * x).norm())
            .sum::<f64>()
            * half
    }

    /// Adaptive Gauss–Legendre arc length of segment `i` over `[a, b] ⊂ [0, 1]`.
    fn segment_arc(&self, i: usize, a: f64, b: f64) -> f64 {
        fn rec(s: &ClosedSpline, i: usize, a: f64, b: f64, whole: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let left = s.gl5(i, a, m);
            let right = s.gl5(i, m, b);
            if depth == 0 || (left + right - whole).abs() <= 1e-12 * (1.0 + whole) {
                left + right
            } else {
                rec(s, i, a, m, left, depth - 1) + rec(s, i, m, b, right, depth - 1)
            }
        }
        if b <= a {
            return 0.0;
        }
        rec(self, i, a, b, self.gl5(i, a, b), 24)
    }

    /// Arc length from `t = 0` to `t` (for `t ∈ [0, n]`).
    pub fn arc_length_at(&self, t: f64) -> f64 {
        let n = self.control.len() as f64;
        if t >= n {
            return self.total_length();
        }
        let (i, u) = self.split(t.max(0.0));
        self.cumulative[i] + self.segment_arc(i, 0.0, u)
    }

    /// Inverse of [`arc_length_at`](Self::arc_length_at).
    pub fn param_at_arc_length(&self, s: f64) -> f64 {
        let total = self.total_length();
        let s = s.clamp(0.0, total);
        let i = self
            .cumulative
            .partition_point(|&c| c <= s)
            .saturating_sub(1)
            .min(self.control.len() - 1);
        let target = s - self.cumulative[i];
        let seg_len = self.segment_lengths[i];
        if seg_len <= 0.0 {
            return i as f64;
        }
        // safeguarded Newton on L(u) - target
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut u = (target / seg_len).clamp(0.0, 1.0);
        for _ in 0..60 {
            let f = self.segment_arc(i, 0.0, u) - target;
            if f.abs() <= 1e-13 * (1.0 + total) {
                break;
            }
            if f > 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            let speed = self.seg_deriv(i, u).norm();
            let newton = u - f / speed;
            u = if speed > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        i as f64 + u
    }

    /// `n` points at equal arc-length spacing, starting at control point 0.
    pub fn resample_arclength(&self, n: usize) -> Result<PointCloud> {
        if n < 3 {
            return Err(GeomError::Size(format!("arc-length resampling needs n >= 3, got {n}")));
        }
        let total = self.total_length();
        Ok(PointCloud::new(
            (0..n)
                .map(|k| self.eval(self.param_at_arc_length(total * k as f64 / n as f64)))
                .collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn circle(n: usize) -> Vec<Point> {
        (0..n)
            .map(|i| {
                let t = TAU * i as f64 / n as f64;
                Point::new(t.cos(), t.sin(), 0.0)
            })
            .collect()
    }

    #[test]
    fn interpolates_square_corners() {
        let sq = vec![
            Point::new(1., 1., 0.),
            Point::new(-1., 1., 0.),
            Point::new(-1., -1., 0.),
            Point::new(1., -1., 0.),
        ];
        let s = fit_closed_spline(&sq).unwrap();
        for (i, p) in sq.iter().enumerate() {
            assert!((s.eval(i as f64) - p).norm() < 1e-9);
        }
        // wraps back onto the first corner
        assert!((s.eval(4.0) - sq[0]).norm() < 1e-9);
    }

    #[test]
    fn three_points_rejected() {
        let tri = vec![Point::new(0., 0., 0.), Point::new(1., 0., 0.), Point::new(0., 1., 0.)];
        assert!(fit_closed_spline(&tri).is_err());
        let mut dup = tri.clone();
        dup.push(Point::new(1., 0., 0.));
        assert!(fit_closed_spline(&dup).is_err());
    }

    #[test]
    fn closing_duplicate_is_dropped() {
        let mut c = circle(8);
        c.push(c[0]);
        assert_eq!(fit_closed_spline(&c).unwrap().segment_count(), 8);
    }

    #[test]
    fn circle_fit_stays_on_circle() {
        let s = fit_closed_spline(&circle(64)).unwrap();
        let worst = (0..64 * 50)
            .map(|k| (s.eval(k as f64 / 50.0).coords.norm() - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-3, "deviation {worst}");
    }

    #[test]
    fn circle_length_matches_quadrature_oracle() {
        let s = fit_closed_spline(&circle(64)).unwrap();
        // midpoint-rule polyline over a very fine evaluation: independent path
        let m = 200_000;
        let mut oracle = 0.0;
        let mut prev = s.eval(0.0);
        for k in 1..=m {
            let q = s.eval(64.0 * k as f64 / m as f64);
            oracle += (q - prev).norm();
            prev = q;
        }
        assert!((s.total_length() - oracle).abs() / oracle < 1e-6);
        assert!((s.total_length() - TAU).abs() < 1e-4);
    }

    #[test]
    fn four_samples_on_circle_are_quarter_turns() {
        let s = fit_closed_spline(&circle(64)).unwrap();
        let pts = s.resample_arclength(4).unwrap();
        for (k, p) in pts.points.iter().enumerate() {
            let t = TAU * k as f64 / 4.0;
            assert!((p - Point::new(t.cos(), t.sin(), 0.0)).norm() < 1e-3);
        }
    }

    #[test]
    fn regular_polygon_spacing() {
        let hexagon = circle(6);
        let s = fit_closed_spline(&hexagon).unwrap();
        let pts = s.resample_arclength(6).unwrap();
        let d: Vec<f64> = (0..6).map(|k| (pts.points[(k + 1) % 6] - pts.points[k]).norm()).collect();
        let (lo, hi) = d.iter().fold((f64::MAX, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        assert!(hi / lo < 1.01);
    }

    #[test]
    fn arc_length_inverse_round_trip() {
        let pts: Vec<Point> = (0..9)
            .map(|i| {
                let t = TAU * i as f64 / 9.0;
                Point::new(3.0 * t.cos(), t.sin(), 0.4 * (2.0 * t).sin())
            })
            .collect();
        let s = fit_closed_spline(&pts).unwrap();
        for k in 0..50 {
            let len = s.total_length() * k as f64 / 50.0;
            assert!((s.arc_length_at(s.param_at_arc_length(len)) - len).abs() < 1e-9);
        }
    }

    #[test]
    fn resampling_is_deterministic_and_sized() {
        let s = fit_closed_spline(&circle(10)).unwrap();
        assert_eq!(s.resample_arclength(17).unwrap(), s.resample_arclength(17).unwrap());
        assert!(s.resample_arclength(2).is_err());
    }
}
