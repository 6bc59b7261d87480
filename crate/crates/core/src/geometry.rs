//! Point sets on the unit square and the density measures derived from them.
//!
//! Level `j` places an `m × m` interior grid with `m = 2^j + 1` at coordinates
//! `i / (m + 1)`, so every interior point is strictly inside the square, and
//! `4 (m - 1)` boundary points at equal perimeter spacing `1 / (m - 1)`.
//! The test points of level `j` are the trial points of level `j + 1`.
//!
//! Fill distances are sup-type quantities; they are approximated from below
//! by maximizing over a dense set of samples of the region.

use std::ops::{Index, Sub};

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// A point in `R^D`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point<const D: usize>(pub [f64; D]);

pub type Point2 = Point<2>;

impl<const D: usize> Point<D> {
    pub const fn new(coords: [f64; D]) -> Self {
        Point(coords)
    }

    pub fn coords(&self) -> &[f64; D] {
        &self.0
    }

    pub fn distance_squared(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.distance_squared(other).sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

impl Point2 {
    pub const fn xy(x: f64, y: f64) -> Self {
        Point([x, y])
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }
}

impl<const D: usize> Index<usize> for Point<D> {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl<const D: usize> Sub for Point<D> {
    type Output = [f64; D];

    fn sub(self, rhs: Self) -> [f64; D] {
        std::array::from_fn(|i| self.0[i] - rhs.0[i])
    }
}

impl<const D: usize> From<[f64; D]> for Point<D> {
    fn from(coords: [f64; D]) -> Self {
        Point(coords)
    }
}

/// Sampling density used to approximate fill distances on the unit square.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FillSampling {
    /// Samples per side of the uniform grid covering the closed square.
    pub area_per_side: usize,
    /// Samples per boundary edge for the chart-wise boundary fill distance.
    pub per_edge: usize,
}

impl Default for FillSampling {
    fn default() -> Self {
        FillSampling {
            area_per_side: 2001,
            per_edge: 4001,
        }
    }
}

impl FillSampling {
    /// A cheaper sampling for diagnostics that do not need four digits.
    pub fn coarse() -> Self {
        FillSampling {
            area_per_side: 257,
            per_edge: 1025,
        }
    }
}

/// Trial and test point sets for one refinement level.
#[derive(Clone, Debug)]
pub struct LevelGeometry {
    pub level_index: usize,
    pub interior_trial: Vec<Point2>,
    pub boundary_trial: Vec<Point2>,
    pub interior_test: Vec<Point2>,
    pub boundary_test: Vec<Point2>,
    /// `2^{-j}`; drives the scale and tolerance schedules.
    pub nominal_h: f64,
    /// Sampled fill distance of the interior trial centers over the square.
    pub measured_h: f64,
    /// Separation distance of the interior trial centers.
    pub measured_q: f64,
}

impl LevelGeometry {
    /// All trial centers, interior first, then boundary.
    pub fn trial_centers(&self) -> Vec<Point2> {
        let mut all = self.interior_trial.clone();
        all.extend_from_slice(&self.boundary_trial);
        all
    }

    /// Number of interior trial centers (the `N` of the convergence tables).
    pub fn n_interior(&self) -> usize {
        self.interior_trial.len()
    }

    pub fn n_trial(&self) -> usize {
        self.interior_trial.len() + self.boundary_trial.len()
    }

    pub fn n_test(&self) -> usize {
        self.interior_test.len() + self.boundary_test.len()
    }
}

/// Points per side of the interior grid at level `j`.
pub fn grid_side(j: usize) -> usize {
    (1usize << j) + 1
}

/// Interior grid of `m × m` points at `i / (m + 1)`, row by row in `y`.
pub fn interior_grid(m: usize) -> Vec<Point2> {
    let denom = (m + 1) as f64;
    let mut points = Vec::with_capacity(m * m);
    for iy in 1..=m {
        for ix in 1..=m {
            points.push(Point2::xy(ix as f64 / denom, iy as f64 / denom));
        }
    }
    points
}

/// `4 (m - 1)` points walking the perimeter counterclockwise from the origin
/// with arclength spacing `1 / (m - 1)`; corners appear once.
pub fn boundary_ring(m: usize) -> Vec<Point2> {
    let steps = m - 1;
    let s = steps as f64;
    let mut points = Vec::with_capacity(4 * steps);
    for k in 0..steps {
        points.push(Point2::xy(k as f64 / s, 0.0));
    }
    for k in 0..steps {
        points.push(Point2::xy(1.0, k as f64 / s));
    }
    for k in 0..steps {
        points.push(Point2::xy(1.0 - k as f64 / s, 1.0));
    }
    for k in 0..steps {
        points.push(Point2::xy(0.0, 1.0 - k as f64 / s));
    }
    points
}

/// Builds level `j` with the default fill-distance sampling.
pub fn build_level(j: usize) -> Result<LevelGeometry> {
    build_level_with(j, &FillSampling::default())
}

pub fn build_level_with(j: usize, sampling: &FillSampling) -> Result<LevelGeometry> {
    if j < 1 {
        return Err(Error::InvalidLevel(j));
    }
    if j > 20 {
        return Err(Error::param("level", format!("{j} is beyond any usable grid")));
    }
    let m = grid_side(j);
    let m_next = grid_side(j + 1);
    let interior_trial = interior_grid(m);
    let measured_h = fill_distance(&interior_trial, &unit_square_samples(sampling.area_per_side))?;
    let measured_q = separation_distance(&interior_trial)?;
    Ok(LevelGeometry {
        level_index: j,
        interior_trial,
        boundary_trial: boundary_ring(m),
        interior_test: interior_grid(m_next),
        boundary_test: boundary_ring(m_next),
        nominal_h: 0.5f64.powi(j as i32),
        measured_h,
        measured_q,
    })
}

/// Uniform `n × n` grid on the closed unit square, corners included.
pub fn unit_square_samples(n: usize) -> Vec<Point2> {
    let n = n.max(2);
    let s = (n - 1) as f64;
    let mut samples = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            samples.push(Point2::xy(ix as f64 / s, iy as f64 / s));
        }
    }
    samples
}

/// `max_{s ∈ samples} min_{p ∈ points} |s − p|`.
///
/// A lower bound for the fill distance of `points` over the sampled region;
/// it converges to the true supremum as the sampling refines.
pub fn fill_distance<const D: usize>(points: &[Point<D>], samples: &[Point<D>]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyInput("points"));
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("region samples"));
    }
    let coords: Vec<[f64; D]> = points.iter().map(|p| p.0).collect();
    let tree: ImmutableKdTree<f64, D> = ImmutableKdTree::new_from_slice(&coords)
        .map_err(|e| Error::param("points", format!("k-d tree construction failed: {e:?}")))?;
    let worst = samples
        .par_chunks(4096)
        .map(|chunk| {
            chunk
                .iter()
                .map(|s| {
                    tree.query(&s.0)
                        .nearest_one::<SquaredEuclidean<f64>>()
                        .execute()
                        .distance
                })
                .fold(0.0f64, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst.sqrt())
}

/// Half the minimum pairwise distance. Coincident points are rejected.
pub fn separation_distance<const D: usize>(points: &[Point<D>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    let (mut best, mut pair) = (f64::INFINITY, (0, 1));
    for (i, p) in points.iter().enumerate() {
        for (k, q) in points.iter().enumerate().skip(i + 1) {
            let d2 = p.distance_squared(q);
            if d2 < best {
                best = d2;
                pair = (i, k);
            }
        }
    }
    if best == 0.0 {
        return Err(Error::DuplicatePoints {
            first: pair.0,
            second: pair.1,
        });
    }
    Ok(0.5 * best.sqrt())
}

/// Boundary fill distance on the unit square: each edge is a chart
/// parameterized by arclength on `[0, 1]`; the per-edge 1-D fill distances
/// are sampled with `per_edge` points and the maximum is returned.
pub fn boundary_fill_distance(boundary: &[Point2], per_edge: usize) -> Result<f64> {
    if boundary.is_empty() {
        return Err(Error::EmptyInput("boundary points"));
    }
    const EPS: f64 = 1e-12;
    // (on this edge?, arc-length coordinate along it)
    type Chart = (fn(&Point2) -> bool, fn(&Point2) -> f64);
    let charts: [Chart; 4] = [
        (|p| p.y().abs() < EPS, |p| p.x()),
        (|p| (p.x() - 1.0).abs() < EPS, |p| p.y()),
        (|p| (p.y() - 1.0).abs() < EPS, |p| p.x()),
        (|p| p.x().abs() < EPS, |p| p.y()),
    ];
    let n = per_edge.max(2);
    let mut worst = 0.0f64;
    for (on_edge, param) in charts {
        let mut ts: Vec<f64> = boundary.iter().filter(|p| on_edge(p)).map(param).collect();
        if ts.is_empty() {
            return Err(Error::EmptyInput("boundary points on an edge"));
        }
        ts.sort_by(f64::total_cmp);
        for i in 0..n {
            let s = i as f64 / (n - 1) as f64;
            let idx = ts.partition_point(|&t| t < s);
            let mut d = f64::INFINITY;
            if idx < ts.len() {
                d = d.min(ts[idx] - s);
            }
            if idx > 0 {
                d = d.min(s - ts[idx - 1]);
            }
            worst = worst.max(d);
        }
    }
    Ok(worst)
}

/// Whether `p` lies on the boundary of the unit square.
pub fn on_unit_square_boundary(p: &Point2, tol: f64) -> bool {
    let inside = (-tol..=1.0 + tol).contains(&p.x()) && (-tol..=1.0 + tol).contains(&p.y());
    inside
        && (p.x().abs() <= tol
            || (p.x() - 1.0).abs() <= tol
            || p.y().abs() <= tol
            || (p.y() - 1.0).abs() <= tol)
}

pub fn strictly_inside_unit_square(p: &Point2) -> bool {
    p.x() > 0.0 && p.x() < 1.0 && p.y() > 0.0 && p.y() < 1.0
}
