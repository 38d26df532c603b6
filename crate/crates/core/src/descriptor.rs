//! Unit-norm descriptors, planar poses, grayscale rasters, and the distance
//! primitives shared by the loss, mining, and retrieval layers.
//!
//! Everything is `f64`. There is no general linear-algebra layer here, only
//! the handful of vector operations the pipeline actually needs.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::math;

/// Norms below this threshold are treated as zero vectors.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Errors from vector construction and distance computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorError {
    /// Input norm below [`ZERO_NORM_EPS`]; no direction can be extracted.
    ZeroVector,
    /// A component (or the norm itself) is NaN or infinite.
    NonFinite,
    /// Operands have different dimensions.
    DimensionMismatch { left: usize, right: usize },
}

impl fmt::Display for VectorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorError::ZeroVector => write!(f, "vector norm below {ZERO_NORM_EPS:e}"),
            VectorError::NonFinite => write!(f, "vector has a non-finite component"),
            VectorError::DimensionMismatch { left, right } => {
                write!(f, "dimension mismatch: {left} vs {right}")
            }
        }
    }
}

impl core::error::Error for VectorError {}

/// A unit-norm embedding vector.
///
/// Instances only come out of [`normalize`] or the encoder's output layer,
/// so holding a `Descriptor` implies unit norm within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    values: Vec<f64>,
}

impl Descriptor {
    /// Number of components.
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Wrap a vector that is already unit norm by construction.
    pub(crate) fn from_unit(values: Vec<f64>) -> Descriptor {
        Descriptor { values }
    }
}

/// Scale `v` to unit norm.
///
/// Fails with [`VectorError::ZeroVector`] when the norm is below
/// [`ZERO_NORM_EPS`] and [`VectorError::NonFinite`] when a component or the
/// norm overflows. Normalizing an already-unit vector reproduces it bitwise.
pub fn normalize(v: &[f64]) -> Result<Descriptor, VectorError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(VectorError::NonFinite);
    }
    let norm = norm_slice(v);
    if !norm.is_finite() {
        return Err(VectorError::NonFinite);
    }
    if norm < ZERO_NORM_EPS {
        return Err(VectorError::ZeroVector);
    }
    if norm == 1.0 {
        return Ok(Descriptor { values: v.to_vec() });
    }
    Ok(Descriptor {
        values: v.iter().map(|x| x / norm).collect(),
    })
}

/// Euclidean distance between two descriptors.
pub fn euclidean(a: &Descriptor, b: &Descriptor) -> Result<f64, VectorError> {
    check_dims(a.dim(), b.dim())?;
    Ok(euclidean_slices(a.as_slice(), b.as_slice()))
}

/// Cosine similarity between two descriptors, clamped to `[-1, 1]`.
///
/// Both inputs are unit norm, so this is their dot product up to rounding;
/// the clamp removes the rounding excursions.
pub fn cosine(a: &Descriptor, b: &Descriptor) -> Result<f64, VectorError> {
    check_dims(a.dim(), b.dim())?;
    Ok(dot(a.as_slice(), b.as_slice()).clamp(-1.0, 1.0))
}

fn check_dims(left: usize, right: usize) -> Result<(), VectorError> {
    if left != right {
        return Err(VectorError::DimensionMismatch { left, right });
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_slice(v: &[f64]) -> f64 {
    math::sqrt(dot(v, v))
}

pub(crate) fn euclidean_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    math::sqrt(sq)
}

/// Planar position in meters (synthetic worlds use the same units throughout).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64) -> Pose {
        Pose { x, y }
    }

    /// Euclidean ground-plane distance.
    pub fn distance(&self, other: &Pose) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        math::sqrt(dx * dx + dy * dy)
    }
}

/// Errors from raster construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterError {
    /// Zero rows or zero columns.
    Empty,
    /// Buffer length does not equal `rows * cols`.
    SizeMismatch { rows: usize, cols: usize, len: usize },
}

impl fmt::Display for RasterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RasterError::Empty => write!(f, "raster must have at least one row and column"),
            RasterError::SizeMismatch { rows, cols, len } => {
                write!(f, "raster buffer length {len} does not match {rows}x{cols}")
            }
        }
    }
}

impl core::error::Error for RasterError {}

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Raster, RasterError> {
        if rows == 0 || cols == 0 {
            return Err(RasterError::Empty);
        }
        if data.len() != rows * cols {
            return Err(RasterError::SizeMismatch { rows, cols, len: data.len() });
        }
        Ok(Raster { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.cols + col]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }
}

/// One dataset image: identity, room label, capture condition, ground-truth
/// pose, and at least one of a pixel raster or a precomputed feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub room: String,
    pub condition: String,
    pub pose: Pose,
    pub pixels: Option<Raster>,
    pub features: Option<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::SQRT_2;
    use proptest::prelude::*;

    fn unit(v: &[f64]) -> Descriptor {
        normalize(v).expect("unit test vector")
    }

    #[test]
    fn normalize_scales_to_unit() {
        let d = unit(&[3.0, 4.0]);
        assert_eq!(d.as_slice(), &[0.6, 0.8]);
        assert_eq!(d.dim(), 2);
    }

    #[test]
    fn normalize_rejects_zero_and_tiny() {
        assert_eq!(normalize(&[0.0, 0.0]), Err(VectorError::ZeroVector));
        assert_eq!(normalize(&[1e-13, -1e-13]), Err(VectorError::ZeroVector));
    }

    #[test]
    fn normalize_rejects_non_finite() {
        assert_eq!(normalize(&[f64::NAN, 1.0]), Err(VectorError::NonFinite));
        assert_eq!(normalize(&[f64::INFINITY, 0.0]), Err(VectorError::NonFinite));
        // Finite components whose norm overflows are also unusable.
        assert_eq!(normalize(&[1e300, 1e300]), Err(VectorError::NonFinite));
    }

    #[test]
    fn normalize_is_bitwise_idempotent() {
        let d = unit(&[0.3, -1.7, 2.2]);
        let again = normalize(d.as_slice()).unwrap();
        for (a, b) in d.as_slice().iter().zip(again.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn euclidean_known_values() {
        let e1 = unit(&[1.0, 0.0]);
        let e2 = unit(&[0.0, 1.0]);
        let neg = unit(&[-1.0, 0.0]);
        assert_eq!(euclidean(&e1, &e1).unwrap(), 0.0);
        assert_eq!(euclidean(&e1, &e2).unwrap(), SQRT_2);
        assert_eq!(euclidean(&e1, &neg).unwrap(), 2.0);
    }

    #[test]
    fn cosine_known_values() {
        let e1 = unit(&[1.0, 0.0]);
        let e2 = unit(&[0.0, 1.0]);
        let neg = unit(&[-1.0, 0.0]);
        assert_eq!(cosine(&e1, &e1).unwrap(), 1.0);
        assert_eq!(cosine(&e1, &e2).unwrap(), 0.0);
        assert_eq!(cosine(&e1, &neg).unwrap(), -1.0);
    }

    #[test]
    fn mismatched_dims_are_rejected() {
        let a = unit(&[1.0, 0.0]);
        let b = unit(&[1.0, 0.0, 0.0]);
        assert_eq!(
            euclidean(&a, &b),
            Err(VectorError::DimensionMismatch { left: 2, right: 3 })
        );
        assert_eq!(
            cosine(&a, &b),
            Err(VectorError::DimensionMismatch { left: 2, right: 3 })
        );
    }

    #[test]
    fn pose_distance() {
        let a = Pose::new(0.0, 0.0);
        let b = Pose::new(3.0, 4.0);
        assert_eq!(a.distance(&b), 5.0);
        assert_eq!(b.distance(&a), 5.0);
    }

    #[test]
    fn raster_shape_checks() {
        assert_eq!(Raster::new(0, 4, vec![]), Err(RasterError::Empty));
        assert_eq!(
            Raster::new(2, 3, vec![0; 5]),
            Err(RasterError::SizeMismatch { rows: 2, cols: 3, len: 5 })
        );
        let r = Raster::new(2, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(r.get(1, 2), 6);
    }

    fn arb_unit_vec(dim: usize) -> impl Strategy<Value = Descriptor> {
        proptest::collection::vec(-1.0f64..1.0, dim)
            .prop_filter("non-degenerate", |v| norm_slice(v) > 1e-6)
            .prop_map(|v| normalize(&v).unwrap())
    }

    proptest! {
        #[test]
        fn squared_euclidean_matches_cosine_identity(
            (a, b) in (2usize..24).prop_flat_map(|d| (arb_unit_vec(d), arb_unit_vec(d)))
        ) {
            let d = euclidean(&a, &b).unwrap();
            let c = cosine(&a, &b).unwrap();
            prop_assert!((d * d - (2.0 - 2.0 * c)).abs() < 1e-10);
        }

        #[test]
        fn triangle_inequality_holds(
            (a, b, c) in (2usize..16)
                .prop_flat_map(|d| (arb_unit_vec(d), arb_unit_vec(d), arb_unit_vec(d)))
        ) {
            let ab = euclidean(&a, &b).unwrap();
            let bc = euclidean(&b, &c).unwrap();
            let ac = euclidean(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn normalized_norm_is_one(d in (2usize..32).prop_flat_map(arb_unit_vec)) {
            prop_assert!((norm_slice(d.as_slice()) - 1.0).abs() < 1e-12);
        }
    }
}
