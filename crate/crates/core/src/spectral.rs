//! Symmetric eigendecomposition, normal-space projectors and projected
//! gradients.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::density::DensityModel;
use crate::error::{Error, Result};

/// Eigen-gaps at or below this are treated as ties.
pub const GAP_TOLERANCE: f64 = 1e-10;

const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Eigenvalues in descending order with paired orthonormal eigenvectors.
///
/// `vectors.column(j)` is the eigenvector of `values[j]`. Each eigenvector is
/// signed so that its largest-magnitude entry is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Eigenvalue with 1-based index `j`, using `lambda_0 = 0`.
    pub fn lambda(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.values[j - 1]
        }
    }

    /// Whether the split between the `d` largest and the `D - d` smallest
    /// eigenvalues is a tie.
    pub fn degenerate_gap(&self, d: usize) -> bool {
        d > 0 && d < self.dim() && self.values[d - 1] - self.values[d] <= GAP_TOLERANCE
    }

    /// Smallest adjacent eigen-gap (infinite in one dimension).
    pub fn min_gap(&self) -> f64 {
        self.values
            .as_slice()
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.vectors * DMatrix::from_diagonal(&self.values) * self.vectors.transpose()
    }
}

/// Orthogonal projector `L = V V^T` onto the span of the eigenvectors of the
/// `D - d` smallest eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub matrix: DMatrix<f64>,
    pub basis: DMatrix<f64>,
    pub d: usize,
}

impl Projector {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }
}

fn max_abs_index(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        // Strict comparison keeps the first of equal magnitudes.
        if x.abs() > v[best].abs() + 1e-14 {
            best = i;
        }
    }
    best
}

fn canonical_sign(v: &mut [f64]) {
    let i = max_abs_index(v);
    if v[i] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y).unwrap_or(Ordering::Equal) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// Eigendecomposition of a symmetric matrix.
pub fn spectrum(h: &DMatrix<f64>) -> Result<Spectrum> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch { expected: h.nrows(), actual: h.ncols() });
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let asym = (h - h.transpose()).amax();
    if asym > SYMMETRY_TOLERANCE * h.amax().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    let dim = h.nrows();
    let sym = (h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);

    let mut pairs: Vec<(f64, Vec<f64>)> = (0..dim)
        .map(|j| {
            let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
            canonical_sign(&mut v);
            (eig.eigenvalues[j], v)
        })
        .collect();
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| lexicographic(&b.1, &a.1))
    });

    let values = DVector::from_iterator(dim, pairs.iter().map(|p| p.0));
    let vectors = DMatrix::from_fn(dim, dim, |r, c| pairs[c].1[r]);
    Ok(Spectrum { values, vectors })
}

/// Projector onto the normal space of a `d`-dimensional ridge.
pub fn normal_projector(s: &Spectrum, d: usize) -> Result<Projector> {
    let dim = s.dim();
    if d >= dim {
        return Err(Error::RidgeDimension { d, dim });
    }
    let basis = s.vectors.columns(d, dim - d).into_owned();
    let matrix = &basis * basis.transpose();
    Ok(Projector { matrix, basis, d })
}

/// `G = L g`.
pub fn projected_gradient(g: &DVector<f64>, l: &Projector) -> Result<DVector<f64>> {
    if g.len() != l.dim() {
        return Err(Error::DimensionMismatch { expected: l.dim(), actual: g.len() });
    }
    Ok(&l.matrix * g)
}

/// Ridge-membership diagnostics at `x` for dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeResidual {
    /// Norm of the projected log-density gradient.
    pub residual: f64,
    /// Largest eigenvalue in the normal space, `lambda_{d+1}`; the ridge
    /// condition requires it to be negative.
    pub lambda: f64,
    pub degenerate_gap: bool,
}

pub fn ridge_residual(model: &DensityModel, x: &[f64], d: usize) -> Result<RidgeResidual> {
    let dim = model.dim();
    if d >= dim {
        return Err(Error::RidgeDimension { d, dim });
    }
    let local = model.local(x)?;
    let s = spectrum(&local.hessian)?;
    let l = normal_projector(&s, d)?;
    let g = projected_gradient(&local.gradient, &l)?;
    Ok(RidgeResidual {
        residual: g.norm(),
        lambda: s.lambda(d + 1),
        degenerate_gap: s.degenerate_gap(d),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PointCloud;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn random_symmetric(entries: &[f64], dim: usize) -> DMatrix<f64> {
        let a = DMatrix::from_column_slice(dim, dim, &entries[..dim * dim]);
        (&a + a.transpose()) * 0.5
    }

    #[test]
    fn diagonal_matrix_sorts_descending() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![-4.0, -1.0]));
        let s = spectrum(&h).unwrap();
        assert_eq!(s.values.as_slice(), &[-1.0, -4.0]);
        assert_relative_eq!(s.vectors, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let l = normal_projector(&s, 1).unwrap();
        assert_relative_eq!(l.matrix, DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])));
    }

    #[test]
    fn scalar_matrix() {
        let s = spectrum(&(-DMatrix::<f64>::identity(3, 3))).unwrap();
        assert_eq!(s.values.as_slice(), &[-1.0, -1.0, -1.0]);
        assert!(s.degenerate_gap(1));
        assert_relative_eq!(s.vectors.transpose() * &s.vectors, DMatrix::identity(3, 3), epsilon = 1e-12);
    }

    #[test]
    fn rejects_asymmetric_input() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(spectrum(&h), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn projector_extremes() {
        let h = DMatrix::from_row_slice(3, 3, &[-2.0, 0.3, 0.1, 0.3, -1.0, 0.2, 0.1, 0.2, -3.0]);
        let s = spectrum(&h).unwrap();
        let full = normal_projector(&s, 0).unwrap();
        assert_relative_eq!(full.matrix, DMatrix::identity(3, 3), epsilon = 1e-12);
        let last = normal_projector(&s, 2).unwrap();
        let u = s.vectors.column(2);
        assert_relative_eq!(last.matrix, &u * u.transpose(), epsilon = 1e-14);
        assert_eq!(last.rank(), 1);
        assert!(normal_projector(&s, 3).is_err());
    }

    #[test]
    fn projected_gradient_cases() {
        let l = Projector {
            matrix: DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0])),
            basis: DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            d: 1,
        };
        let g = DVector::from_vec(vec![3.0, 5.0]);
        assert_eq!(projected_gradient(&g, &l).unwrap().as_slice(), &[0.0, 5.0]);
        let null = DVector::from_vec(vec![2.0, 0.0]);
        assert_eq!(projected_gradient(&null, &l).unwrap().norm(), 0.0);
        assert!(projected_gradient(&DVector::from_vec(vec![1.0]), &l).is_err());
    }

    #[test]
    fn residual_at_mode_and_on_symmetry_axis() {
        let single = DensityModel::new(PointCloud::from_rows(&[[0.5, -0.5]]).unwrap(), 1.0).unwrap();
        let r = ridge_residual(&single, &[0.5, -0.5], 0).unwrap();
        assert!(r.residual <= 1e-8 && r.lambda < 0.0);

        // Two equal blobs at (0, +-1): the y-axis joining them is a 1-ridge by
        // symmetry.
        let two = DensityModel::new(PointCloud::from_rows(&[[0.0, 1.0], [0.0, -1.0]]).unwrap(), 0.8)
            .unwrap();
        for y in [0.0, 0.4, 0.9, 1.3] {
            let r = ridge_residual(&two, &[0.0, y], 1).unwrap();
            assert!(r.residual <= 1e-12 && r.lambda < 0.0, "y = {y}: {r:?}");
        }
        assert!(ridge_residual(&two, &[0.3, 0.4], 1).unwrap().residual > 1e-3);

        let far = ridge_residual(&two, &[0.0, 3.0], 0).unwrap();
        assert!(far.lambda.is_finite());
    }

    #[test]
    fn ridge_sets_are_nested_at_a_mode() {
        let pts = PointCloud::from_rows(&[[0.0, 0.0, 0.0], [0.2, 0.1, 0.0], [-0.1, 0.3, 0.1]]).unwrap();
        let model = DensityModel::new(pts, 0.7).unwrap();
        // Locate the mode by mean shift iterations.
        let mut x = vec![0.0; 3];
        for _ in 0..2000 {
            x = model.shift_target(&x).unwrap();
        }
        let r0 = ridge_residual(&model, &x, 0).unwrap();
        assert!(r0.residual < 1e-10 && r0.lambda < 0.0);
        for d in 1..3 {
            assert!(ridge_residual(&model, &x, d).unwrap().residual <= r0.residual + 1e-14);
        }
    }

    proptest! {
        #[test]
        fn reconstruction_and_orthonormality(entries in prop::collection::vec(-5.0f64..5.0, 16), dim in 1usize..=4) {
            let h = random_symmetric(&entries, dim);
            let s = spectrum(&h).unwrap();
            prop_assert!((s.reconstruct() - &h).amax() <= 1e-10 * h.amax().max(1.0));
            prop_assert!((s.vectors.transpose() * &s.vectors - DMatrix::identity(dim, dim)).amax() <= 1e-10);
            for j in 0..dim {
                let u = s.vectors.column(j);
                let res = (&h * u - u * s.values[j]).norm();
                prop_assert!(res <= 1e-8 * h.amax().max(1.0));
            }
            for w in s.values.as_slice().windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
        }

        #[test]
        fn projector_is_idempotent_and_sign_invariant(entries in prop::collection::vec(-5.0f64..5.0, 9), d in 0usize..3) {
            let h = random_symmetric(&entries, 3);
            let s = spectrum(&h).unwrap();
            prop_assume!(s.min_gap() > 1e-6);
            let l = normal_projector(&s, d).unwrap();
            prop_assert!((&l.matrix * &l.matrix - &l.matrix).amax() <= 1e-10);
            prop_assert!((l.matrix.trace() - (3 - d) as f64).abs() <= 1e-8);

            let mut flipped = s.clone();
            for j in 0..3 {
                if j % 2 == 0 {
                    flipped.vectors.column_mut(j).neg_mut();
                }
            }
            let lf = normal_projector(&flipped, d).unwrap();
            prop_assert!((lf.matrix - &l.matrix).amax() <= 1e-12);
        }

        #[test]
        fn projection_contracts(entries in prop::collection::vec(-5.0f64..5.0, 9), g in prop::collection::vec(-5.0f64..5.0, 3), d in 0usize..3) {
            let s = spectrum(&random_symmetric(&entries, 3)).unwrap();
            let l = normal_projector(&s, d).unwrap();
            let g = DVector::from_vec(g);
            let pg = projected_gradient(&g, &l).unwrap();
            prop_assert!(pg.norm() <= g.norm() + 1e-12);
            let ppg = projected_gradient(&pg, &l).unwrap();
            prop_assert!((ppg - &pg).amax() <= 1e-10);
        }

        #[test]
        fn shift_moves_eigenvalues(entries in prop::collection::vec(-5.0f64..5.0, 9), c in -3.0f64..3.0) {
            let h = random_symmetric(&entries, 3);
            let s = spectrum(&h).unwrap();
            prop_assume!(s.min_gap() > 1e-4);
            let shifted = spectrum(&(&h + DMatrix::identity(3, 3) * c)).unwrap();
            for j in 0..3 {
                prop_assert!((shifted.values[j] - s.values[j] - c).abs() <= 1e-9);
                let dot = shifted.vectors.column(j).dot(&s.vectors.column(j));
                prop_assert!((dot.abs() - 1.0).abs() <= 1e-7);
            }
        }
    }
}
