//! Fixed node axes on the unit sphere, the shared lobe sharpness, and the
//! k-nearest-neighbour graph the predictor convolves over.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Unit-norm direction on the sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

/// Tolerance used when a caller hands us a direction that must be unit-norm.
pub const UNIT_TOLERANCE: f64 = 1e-6;

impl<T: Real> Direction<T> {
    /// Wraps components that the caller guarantees are unit-norm.
    #[inline]
    pub const fn new_unchecked(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    /// Accepts a direction only if its norm is within [`UNIT_TOLERANCE`] of one.
    pub fn new(x: T, y: T, z: T) -> Result<Self> {
        let d = Self { x, y, z };
        d.check_unit()?;
        Ok(d)
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn normalize(x: T, y: T, z: T) -> Result<Self> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !(norm > T::zero()) || !norm.is_finite() {
            return Err(invalid("cannot normalize a zero or non-finite vector"));
        }
        Ok(Self {
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    pub fn from_array(v: [T; 3]) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }

    #[inline]
    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn norm(self) -> T {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    #[inline]
    pub fn dot(self, other: Self) -> T {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Great-circle angle in radians.
    pub fn angle_to(self, other: Self) -> T {
        // atan2 of |a×b| and a·b stays accurate for nearly (anti)parallel pairs.
        let cx = self.y * other.z - self.z * other.y;
        let cy = self.z * other.x - self.x * other.z;
        let cz = self.x * other.y - self.y * other.x;
        let cross = (cx * cx + cy * cy + cz * cz).sqrt();
        cross.atan2(self.dot(other))
    }

    pub fn check_unit(self) -> Result<()> {
        let n = self.norm();
        if !n.is_finite() || (n - T::one()).abs().to_f64_lossy() > UNIT_TOLERANCE {
            return Err(invalid(format!(
                "direction ({}, {}, {}) is not unit-norm",
                self.x, self.y, self.z
            )));
        }
        Ok(())
    }

    pub fn cast<U: Real>(self) -> Direction<U> {
        Direction {
            x: U::lit(self.x.to_f64_lossy()),
            y: U::lit(self.y.to_f64_lossy()),
            z: U::lit(self.z.to_f64_lossy()),
        }
    }
}

/// Golden-angle spiral with z stratified into `n` equal-area bands.
///
/// Used for node placement and as a quadrature rule over the sphere.
pub fn fibonacci_directions<T: Real>(n: usize) -> Vec<Direction<T>> {
    let nf = T::from_usize_exact(n);
    let two = T::lit(2.0);
    let golden_angle = T::PI() * (T::lit(3.0) - T::lit(5.0).sqrt());
    (0..n)
        .map(|i| {
            let fi = T::from_usize_exact(i);
            let z = T::one() - (two * fi + T::one()) / nf;
            let r = (T::one() - z * z).max(T::zero()).sqrt();
            let phi = fi * golden_angle;
            Direction::new_unchecked(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Places `n` evenly distributed node axes. Deterministic in `n`.
pub fn place_nodes<T: Real>(n: usize) -> Result<Vec<Direction<T>>> {
    if n < 2 {
        return Err(invalid(format!("node count must be at least 2, got {n}")));
    }
    Ok(fibonacci_directions(n))
}

/// Shared lobe sharpness for `n` nodes: `ln(0.6) / (cos(atan(2/sqrt(n))) - 1)`.
///
/// At the angular half-spacing `atan(2/sqrt(n))` every lobe has decayed to 0.6.
pub fn bandwidth<T: Real>(n: usize) -> Result<T> {
    if n < 2 {
        return Err(invalid(format!("node count must be at least 2, got {n}")));
    }
    let half_spacing = (T::lit(2.0) / T::from_usize_exact(n).sqrt()).atan();
    Ok(T::lit(0.6).ln() / (half_spacing.cos() - T::one()))
}

/// Node axes plus the sharpness every lobe shares.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLayout<T> {
    axes: Vec<Direction<T>>,
    sharpness: T,
}

impl<T: Real> NodeLayout<T> {
    /// The standard layout: spiral axes and `bandwidth(n)`.
    pub fn new(n: usize) -> Result<Self> {
        Ok(Self {
            axes: place_nodes(n)?,
            sharpness: bandwidth(n)?,
        })
    }

    /// A layout with caller-provided axes and sharpness.
    ///
    /// Axes are checked for unit norm only; duplicates are allowed so that
    /// degenerate systems can be diagnosed downstream.
    pub fn from_axes(axes: Vec<Direction<T>>, sharpness: T) -> Result<Self> {
        if axes.is_empty() {
            return Err(invalid("layout needs at least one axis"));
        }
        if !(sharpness > T::zero()) || !sharpness.is_finite() {
            return Err(invalid("sharpness must be positive and finite"));
        }
        for a in &axes {
            a.check_unit()?;
        }
        Ok(Self { axes, sharpness })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.axes.len()
    }

    #[inline]
    pub fn axes(&self) -> &[Direction<T>] {
        &self.axes
    }

    #[inline]
    pub fn sharpness(&self) -> T {
        self.sharpness
    }

    /// Smallest great-circle angle between two distinct nodes, radians.
    pub fn min_separation(&self) -> T {
        let mut best = T::infinity();
        for i in 0..self.axes.len() {
            for j in (i + 1)..self.axes.len() {
                best = best.min(self.axes[i].angle_to(self.axes[j]));
            }
        }
        best
    }

    pub fn to_export(&self) -> LayoutExport {
        LayoutExport {
            n: self.n(),
            lambda: self.sharpness.to_f64_lossy(),
            nodes: self
                .axes
                .iter()
                .enumerate()
                .map(|(index, a)| NodeExport {
                    index,
                    axis: a.cast::<f64>().to_array(),
                })
                .collect(),
        }
    }
}

/// JSON form of a layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutExport {
    pub n: usize,
    pub lambda: f64,
    pub nodes: Vec<NodeExport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeExport {
    pub index: usize,
    pub axis: [f64; 3],
}

/// Row-major square matrix of booleans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    bits: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            bits: vec![false; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let n = rows.len();
        let mut a = Self::empty(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(invalid("adjacency must be square"));
            }
            for (j, &b) in row.iter().enumerate() {
                a.set(i, j, b);
            }
        }
        Ok(a)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.n + j] = v;
    }

    pub fn row_count(&self, i: usize) -> usize {
        self.bits[i * self.n..(i + 1) * self.n].iter().filter(|&&b| b).count()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// `max(A, Aᵀ)`.
    pub fn symmetrized(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            for j in 0..self.n {
                if self.get(i, j) {
                    out.set(j, i, true);
                }
            }
        }
        out
    }

    pub fn as_bits(&self) -> &[bool] {
        &self.bits
    }
}

/// Node layout together with its k-NN graph and normalized propagation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpec<T> {
    pub layout: NodeLayout<T>,
    pub k: usize,
    /// Directed k-NN relation: row `i` marks the `k` nearest nodes of `i`.
    pub directed: Adjacency,
    /// `max(directed, directedᵀ)`.
    pub adjacency: Adjacency,
    /// Row-major `D^-1/2 (A + I) D^-1/2`.
    pub normalized: Vec<T>,
}

/// Builds the k-NN graph over the layout axes by angular distance.
///
/// Ties in distance go to the lower index. The directed relation is
/// symmetrized before normalization.
pub fn knn_adjacency<T: Real>(layout: &NodeLayout<T>, k: usize) -> Result<GraphSpec<T>> {
    let n = layout.n();
    if k < 1 || k >= n {
        return Err(invalid(format!("k must be in [1, {}), got {k}", n)));
    }
    let axes = layout.axes();
    let mut directed = Adjacency::empty(n);
    let mut order: Vec<(T, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i).map(|j| (axes[i].angle_to(axes[j]), j)));
        order.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        for &(_, j) in order.iter().take(k) {
            directed.set(i, j, true);
        }
    }
    let adjacency = directed.symmetrized();
    let normalized = normalize_adjacency(&adjacency)?;
    Ok(GraphSpec {
        layout: layout.clone(),
        k,
        directed,
        adjacency,
        normalized,
    })
}

/// Symmetric renormalization with self-loops, `D^-1/2 (A + I) D^-1/2`.
pub fn normalize_adjacency<T: Real>(a: &Adjacency) -> Result<Vec<T>> {
    let n = a.n();
    if !a.is_symmetric() {
        return Err(invalid("adjacency must be symmetric"));
    }
    if (0..n).any(|i| a.get(i, i)) {
        return Err(invalid("adjacency must have a zero diagonal"));
    }
    let inv_sqrt_deg: Vec<T> = (0..n)
        .map(|i| T::one() / T::from_usize_exact(a.row_count(i) + 1).sqrt())
        .collect();
    let mut out = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j || a.get(i, j) {
                out[i * n + j] = inv_sqrt_deg[i] * inv_sqrt_deg[j];
            }
        }
    }
    Ok(out)
}
