//! Trajectories, arc-length resampling and L1 geometry.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// An ordered sequence of `d`-dimensional points with per-point weights.
///
/// Points are stored row-wise: row `i` of [`Trajectory::points`] is the
/// `i`-th point.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: DMatrix<f64>,
    weights: DVector<f64>,
}

impl Trajectory {
    /// Builds a trajectory with uniform unit weights.
    pub fn new(points: DMatrix<f64>) -> Result<Self> {
        let weights = DVector::from_element(points.nrows(), 1.0);
        Self::with_weights(points, weights)
    }

    pub fn with_weights(points: DMatrix<f64>, weights: DVector<f64>) -> Result<Self> {
        if points.nrows() < 2 {
            return Err(Error::InvalidTrajectory(format!(
                "need at least 2 points, got {}",
                points.nrows()
            )));
        }
        if points.ncols() == 0 {
            return Err(Error::InvalidTrajectory("points have dimension 0".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTrajectory("non-finite coordinate".into()));
        }
        if weights.len() != points.nrows() {
            return Err(Error::InvalidTrajectory(format!(
                "{} weights for {} points",
                weights.len(),
                points.nrows()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidTrajectory("weights must be finite and nonnegative".into()));
        }
        if weights.iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidTrajectory("at least one weight must be positive".into()));
        }
        Ok(Self { points, weights })
    }

    /// Convenience constructor from a list of rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: bad.len() });
        }
        let points = DMatrix::from_fn(rows.len(), dim, |i, k| rows[i][k]);
        Self::new(points)
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// A trajectory whose points all coincide. Resampling such a trajectory
    /// yields copies of the single point.
    pub fn is_degenerate(&self) -> bool {
        arc_length(self) == 0.0
    }
}

/// A nonempty set of demonstrations sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DemonstrationSet {
    demos: Vec<Trajectory>,
}

impl DemonstrationSet {
    pub fn new(demos: Vec<Trajectory>) -> Result<Self> {
        let first = demos
            .first()
            .ok_or_else(|| Error::InvalidTrajectory("demonstration set is empty".into()))?;
        let dim = first.dim();
        if let Some(bad) = demos.iter().find(|t| t.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: bad.dim() });
        }
        Ok(Self { demos })
    }

    pub fn single(demo: Trajectory) -> Self {
        Self { demos: vec![demo] }
    }

    pub fn demos(&self) -> &[Trajectory] {
        &self.demos
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.demos[0].dim()
    }

    /// Axis-aligned bounding box `(min, max)` over every demonstration point.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for demo in &self.demos {
            for row in demo.points().row_iter() {
                for k in 0..d {
                    lo[k] = lo[k].min(row[k]);
                    hi[k] = hi[k].max(row[k]);
                }
            }
        }
        (lo, hi)
    }
}

/// Sum of Euclidean segment lengths.
pub fn arc_length(traj: &Trajectory) -> f64 {
    segment_lengths(traj.points()).iter().sum()
}

fn segment_lengths(points: &DMatrix<f64>) -> Vec<f64> {
    (1..points.nrows())
        .map(|i| (points.row(i) - points.row(i - 1)).norm())
        .collect()
}

/// Resamples `traj` to `n` points equally spaced in arc length along the
/// piecewise-linear path. Endpoints are copied exactly, weights are linearly
/// interpolated.
///
/// A zero-length input yields `n` copies of its single point; the result
/// reports [`Trajectory::is_degenerate`].
pub fn resample(traj: &Trajectory, n: usize) -> Result<Trajectory> {
    if n < 2 {
        return Err(Error::InvalidTrajectory(format!("cannot resample to {n} points")));
    }
    let pts = traj.points();
    let w = traj.weights();
    let m = traj.len();
    let d = traj.dim();

    let seg = segment_lengths(pts);
    let mut cum = Vec::with_capacity(m);
    cum.push(0.0);
    for s in &seg {
        cum.push(cum.last().unwrap() + s);
    }
    let total = cum[m - 1];

    let mut out = DMatrix::zeros(n, d);
    let mut out_w = DVector::zeros(n);

    if total == 0.0 {
        log::warn!("resampling a zero-length trajectory; every node coincides");
        let w_mean = w.mean();
        for i in 0..n {
            out.set_row(i, &pts.row(0));
            out_w[i] = w_mean;
        }
        return Trajectory::with_weights(out, out_w);
    }

    out.set_row(0, &pts.row(0));
    out_w[0] = w[0];
    out.set_row(n - 1, &pts.row(m - 1));
    out_w[n - 1] = w[m - 1];

    let mut seg_idx = 0;
    for i in 1..n - 1 {
        let target = total * i as f64 / (n - 1) as f64;
        while seg_idx + 1 < m - 1 && cum[seg_idx + 1] < target {
            seg_idx += 1;
        }
        // skip zero-length segments
        while seg_idx + 1 < m - 1 && seg[seg_idx] == 0.0 {
            seg_idx += 1;
        }
        let len = seg[seg_idx];
        let t = if len > 0.0 { ((target - cum[seg_idx]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let a = pts.row(seg_idx);
        let b = pts.row(seg_idx + 1);
        out.set_row(i, &(a + (b - a) * t));
        out_w[i] = w[seg_idx] + (w[seg_idx + 1] - w[seg_idx]) * t;
    }

    Trajectory::with_weights(out, out_w)
}

/// `‖a − b‖₁`.
pub fn l1_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}
