//! Eigensignatures of the log-density Hessian and their sampling variance.
//!
//! For descending eigenvalues `l_1 >= ... >= l_D` (with `l_0 = 0`) the
//! signature of dimension `j` is
//!
//! ```text
//! S_j = 1(l_{j+1} < 0) |l_{j+1}| (|l_{j+1}| / |l_D|) prod_{i=0..=j} (1 - |min(l_i, 0)| / |l_D|)
//! ```
//!
//! `S_j` is large when the local shape of the density looks like a
//! `j`-dimensional structure: a mode, a filament, a wall, and so on.

use nalgebra::DMatrix;

use crate::density::DensityModel;
use crate::error::{Error, Result};
use crate::spectral::{spectrum, Spectrum, GAP_TOLERANCE};

/// `S_0 .. S_{D-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureVector(pub Vec<f64>);

impl SignatureVector {
    pub fn get(&self, d: usize) -> f64 {
        self.0[d]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Dimension with the largest signature.
    pub fn dominant(&self) -> Option<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(j, _)| j)
    }
}

/// Signature vector of a descending eigenvalue list.
pub fn signature_vector(lambda: &[f64]) -> SignatureVector {
    let dim = lambda.len();
    let mut out = vec![0.0; dim];
    let Some(&last) = lambda.last() else {
        return SignatureVector(out);
    };
    if last >= 0.0 {
        return SignatureVector(out);
    }
    let scale = last.abs();
    // prod_{i=1..=j} (1 - |min(l_i, 0)| / |l_D|); the i = 0 factor is 1.
    let mut product = 1.0;
    for j in 0..dim {
        let l = lambda[j];
        if j > 0 {
            product *= 1.0 - lambda[j - 1].min(0.0).abs() / scale;
        }
        if l < 0.0 {
            let a = l.abs();
            out[j] = a * (a / scale) * product;
        }
    }
    SignatureVector(out)
}

/// Plug-in signatures at `x` from the log-density Hessian.
pub fn signatures_at(model: &DensityModel, x: &[f64]) -> Result<(SignatureVector, Spectrum)> {
    let h = model.log_hessian(x)?;
    let s = spectrum(&h)?;
    Ok((signature_vector(s.values.as_slice()), s))
}

/// `S_d` at `x`.
pub fn signature_at(model: &DensityModel, x: &[f64], d: usize) -> Result<f64> {
    let dim = model.dim();
    if d >= dim {
        return Err(Error::RidgeDimension { d, dim });
    }
    Ok(signatures_at(model, x)?.0.get(d))
}

/// Jacobian `dS_j / dl_k` of the signature map (row `j`, column `k - 1`).
///
/// Undefined where the map is not smooth: at ties between eigenvalues and at
/// zero eigenvalues, where the indicator and `min(., 0)` kinks sit.
pub fn signature_jacobian(lambda: &[f64]) -> Result<DMatrix<f64>> {
    let dim = lambda.len();
    if dim == 0 {
        return Err(Error::InvalidArgument("empty eigenvalue list".into()));
    }
    let mut jac = DMatrix::zeros(dim, dim);
    let ld = lambda[dim - 1];
    if ld > 0.0 {
        return Ok(jac);
    }
    if let Some(k) = lambda.iter().position(|&l| l == 0.0) {
        return Err(Error::NonSmooth(format!("eigenvalue {} is zero", k + 1)));
    }
    if let Some(k) = lambda.windows(2).position(|w| w[0] <= w[1]) {
        return Err(Error::NonSmooth(format!(
            "eigenvalues {} and {} are tied or unordered",
            k + 1,
            k + 2
        )));
    }
    let s = signature_vector(lambda).0;
    // sum_{i=1..=j} l_i / (l_D - l_i) 1(l_i < 0), accumulated over rows.
    let mut tail = 0.0;
    for j in 0..dim {
        if j > 0 && lambda[j - 1] < 0.0 {
            tail += lambda[j - 1] / (ld - lambda[j - 1]);
        }
        if lambda[j] >= 0.0 {
            continue;
        }
        for k in 0..j {
            if lambda[k] < 0.0 {
                jac[(j, k)] = s[j] / (lambda[k] - ld);
            }
        }
        if j + 1 < dim {
            jac[(j, j)] = s[j] * 2.0 / lambda[j];
            jac[(j, dim - 1)] = s[j] * (-1.0 / ld + tail / ld);
        } else {
            jac[(j, dim - 1)] = s[j] * (1.0 / ld + tail / ld);
        }
    }
    Ok(jac)
}

/// Jacobian of the eigenvalues with respect to `vec(H)`: row `j` is
/// `vec(u_j u_j^T)^T` (column-major `vec`).
pub fn eigenvalue_jacobian(s: &Spectrum) -> Result<DMatrix<f64>> {
    let dim = s.dim();
    if s.min_gap() <= GAP_TOLERANCE {
        return Err(Error::DegenerateSpectrum(format!("minimum eigen-gap {:e}", s.min_gap())));
    }
    Ok(DMatrix::from_fn(dim, dim * dim, |j, idx| {
        let (row, col) = (idx % dim, idx / dim);
        s.vectors[(row, j)] * s.vectors[(col, j)]
    }))
}

/// Index pairs `(row, col)` with `row >= col`, ordered column by column: the
/// layout of `vech`.
pub fn vech_pairs(dim: usize) -> Vec<(usize, usize)> {
    (0..dim).flat_map(|c| (c..dim).map(move |r| (r, c))).collect()
}

/// Duplication matrix mapping `vech(A)` to `vec(A)` for symmetric `A`.
pub fn duplication_matrix(dim: usize) -> DMatrix<f64> {
    let pairs = vech_pairs(dim);
    let mut dup = DMatrix::zeros(dim * dim, pairs.len());
    for (k, &(r, c)) in pairs.iter().enumerate() {
        dup[(c * dim + r, k)] = 1.0;
        dup[(r * dim + c, k)] = 1.0;
    }
    dup
}

/// Gauss-Hermite nodes and weights for `int f(x) exp(-x^2) dx`, from the
/// eigendecomposition of the Jacobi matrix.
pub fn gauss_hermite(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(Error::InvalidArgument("quadrature order must be positive".into()));
    }
    let jacobi = DMatrix::from_fn(order, order, |r, c| {
        if r.abs_diff(c) == 1 {
            (r.max(c) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let s = spectrum(&jacobi)?;
    let mu0 = std::f64::consts::PI.sqrt();
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|j| (s.values[j], mu0 * s.vectors[(0, j)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs.into_iter().unzip())
}

/// `R(vech d2K) = int vech(d2K) vech(d2K)^T` for the standard Gaussian kernel.
///
/// `d2K(x)_{ab} = (x_a x_b - delta_ab) phi(x)`, so every entry is an integral
/// of a polynomial against `phi^2 = (2 pi)^-D exp(-|x|^2)`. The integrand
/// factorises over coordinates; each factor is evaluated by Gauss-Hermite
/// quadrature, which is exact for the degrees involved.
pub fn kernel_hessian_roughness(dim: usize) -> Result<DMatrix<f64>> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let (nodes, weights) = gauss_hermite(6)?;
    // moment[k] = int x^k exp(-x^2) dx for k <= 4.
    let moment: Vec<f64> =
        (0..=4).map(|k| nodes.iter().zip(&weights).map(|(x, w)| w * x.powi(k)).sum()).collect();

    // Integral of prod_c x_c^{power_c} exp(-|x|^2) over R^D.
    let monomial = |idx: &[usize]| -> f64 {
        let mut powers = vec![0usize; dim];
        for &i in idx {
            powers[i] += 1;
        }
        powers.iter().map(|&p| moment[p]).product()
    };

    let pairs = vech_pairs(dim);
    let norm = (2.0 * std::f64::consts::PI).powi(-(dim as i32));
    let m = pairs.len();
    let mut r = DMatrix::zeros(m, m);
    for (i, &(a, b)) in pairs.iter().enumerate() {
        for (j, &(c, e)) in pairs.iter().enumerate().skip(i) {
            let dab = f64::from(u8::from(a == b));
            let dce = f64::from(u8::from(c == e));
            let v = monomial(&[a, b, c, e]) - dce * monomial(&[a, b]) - dab * monomial(&[c, e])
                + dab * dce * monomial(&[]);
            r[(i, j)] = v * norm;
            r[(j, i)] = v * norm;
        }
    }
    Ok(r)
}

/// `Sigma(x) = R(vech d2K) p(x)`, the asymptotic covariance of the scaled
/// raw-density Hessian estimate in `vech` coordinates.
pub fn kernel_hessian_covariance(dim: usize, density: f64) -> Result<DMatrix<f64>> {
    if !(density >= 0.0 && density.is_finite()) {
        return Err(Error::InvalidArgument(format!("density must be non-negative, got {density}")));
    }
    Ok(kernel_hessian_roughness(dim)? * density)
}

/// Asymptotic covariance of the signature vector and the standard error of
/// one component.
#[derive(Debug, Clone)]
pub struct SignatureUncertainty {
    pub d: usize,
    pub signature: SignatureVector,
    /// `J_s J_l Sigma J_l^T J_s^T` for the log-density Hessian.
    pub gamma: DMatrix<f64>,
    /// `sqrt(gamma_dd / (n h^(D+4)))`.
    pub stderr: f64,
}

/// Delta-method variance of `S_d(x)`.
///
/// The log-density Hessian is `H_p / p - g g^T / p^2`; its leading-order
/// fluctuation is that of `H_p / p`, so `Sigma(x)` is divided by `p(x)^2`
/// before being pushed through the eigenvalue and signature Jacobians.
pub fn signature_variance(model: &DensityModel, x: &[f64], d: usize) -> Result<SignatureUncertainty> {
    let dim = model.dim();
    if d >= dim {
        return Err(Error::RidgeDimension { d, dim });
    }
    let local = model.local(x)?;
    let s = spectrum(&local.hessian)?;
    if let Some(l) = s.values.iter().find(|l| l.abs() <= GAP_TOLERANCE) {
        return Err(Error::NonSmooth(format!("eigenvalue {l:e} is zero")));
    }
    let j_lambda = eigenvalue_jacobian(&s)?;
    let j_s = signature_jacobian(s.values.as_slice())?;

    let p = local.density;
    let sigma_vech = kernel_hessian_covariance(dim, p)? / (p * p);
    let dup = duplication_matrix(dim);
    let sigma_vec = &dup * sigma_vech * dup.transpose();
    let chain = &j_s * &j_lambda;
    let gamma = &chain * sigma_vec * chain.transpose();
    let gamma = (&gamma + gamma.transpose()) * 0.5;

    let h = model.bandwidth();
    let scale = model.n() as f64 * h.powi(dim as i32 + 4);
    let stderr = (gamma[(d, d)].max(0.0) / scale).sqrt();
    Ok(SignatureUncertainty {
        d,
        signature: signature_vector(s.values.as_slice()),
        gamma,
        stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PointCloud;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent transcription of the signature formula, term by term.
    fn oracle_signature(lambda: &[f64]) -> Vec<f64> {
        let dim = lambda.len();
        let full: Vec<f64> = std::iter::once(0.0).chain(lambda.iter().copied()).collect();
        let ld = full[dim].abs();
        (0..dim)
            .map(|j| {
                let l = full[j + 1];
                if l >= 0.0 {
                    return 0.0;
                }
                let prod: f64 = (0..=j).map(|i| 1.0 - full[i].min(0.0).abs() / ld).product();
                l.abs() * (l.abs() / ld) * prod
            })
            .collect()
    }

    fn fd_jacobian(lambda: &[f64], step: f64) -> DMatrix<f64> {
        let dim = lambda.len();
        DMatrix::from_fn(dim, dim, |j, k| {
            let mut lp = lambda.to_vec();
            let mut lm = lambda.to_vec();
            lp[k] += step;
            lm[k] -= step;
            (oracle_signature(&lp)[j] - oracle_signature(&lm)[j]) / (2.0 * step)
        })
    }

    #[test]
    fn idealised_rows() {
        for c in [0.5, 1.0, 2.0, 10.0] {
            assert_eq!(signature_vector(&[-c, -c, -c]).0, vec![c, 0.0, 0.0]);
            assert_eq!(signature_vector(&[0.0, -c, -c]).0, vec![0.0, c, 0.0]);
            assert_eq!(signature_vector(&[0.0, 0.0, -c]).0, vec![0.0, 0.0, c]);
        }
    }

    #[test]
    fn hand_evaluated_case_and_positive_spectrum() {
        let s = signature_vector(&[-1.0, -2.0, -4.0]).0;
        assert_relative_eq!(s[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(s[1], 0.75, epsilon = 1e-15);
        assert_relative_eq!(s[2], 1.5, epsilon = 1e-15);
        assert_eq!(oracle_signature(&[-1.0, -2.0, -4.0]), s);
        assert_eq!(signature_vector(&[1.0, 0.5, 0.1]).0, vec![0.0; 3]);
    }

    #[test]
    fn mode_to_filament_transition_is_monotone() {
        let mut prev: Option<Vec<f64>> = None;
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let s = signature_vector(&[-1.0 + t, -1.0, -1.0]).0;
            if let Some(p) = prev {
                assert!(s[0] <= p[0] + 1e-15);
                assert!(s[1] >= p[1] - 1e-15);
            }
            prev = Some(s);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let lambda = [-1.0, -2.0, -4.0];
        let j = signature_jacobian(&lambda).unwrap();
        let fd = fd_jacobian(&lambda, 1e-6);
        for (a, b) in j.iter().zip(fd.iter()) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{j} vs {fd}");
        }
    }

    #[test]
    fn jacobian_row_vanishes_with_positive_leading_eigenvalue() {
        let j = signature_jacobian(&[0.5, -1.0, -3.0]).unwrap();
        assert!(j.row(0).iter().all(|v| *v == 0.0));
        let fd = fd_jacobian(&[0.5, -1.0, -3.0], 1e-6);
        assert!((j - fd).amax() <= 1e-6);
    }

    #[test]
    fn jacobian_rejects_non_smooth_points() {
        assert!(matches!(signature_jacobian(&[-1.0, -1.0, -2.0]), Err(Error::NonSmooth(_))));
        assert!(matches!(signature_jacobian(&[0.0, -1.0, -2.0]), Err(Error::NonSmooth(_))));
    }

    #[test]
    fn eigenvalue_jacobian_rows() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -2.0]));
        let j = eigenvalue_jacobian(&spectrum(&h).unwrap()).unwrap();
        assert_eq!(j.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(j.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0, 1.0]);
        assert!(eigenvalue_jacobian(&spectrum(&DMatrix::identity(2, 2)).unwrap()).is_err());
    }

    #[test]
    fn eigenvalue_jacobian_predicts_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-2.0..2.0));
            let h = (&a + a.transpose()) * 0.5;
            let e = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let e = (&e + e.transpose()) * 0.5;
            let s = spectrum(&h).unwrap();
            if s.min_gap() < 1e-2 {
                continue;
            }
            let jl = eigenvalue_jacobian(&s).unwrap();
            for row in jl.row_iter() {
                assert_relative_eq!(row.norm(), 1.0, epsilon = 1e-12);
            }
            let vec_e = DVector::from_column_slice(e.as_slice());
            let pred = &jl * vec_e;
            let t = 1e-6;
            let st = spectrum(&(&h + &e * t)).unwrap();
            let actual = (&st.values - &s.values) / t;
            assert!((actual - pred).amax() <= 1e-4);
        }
    }

    #[test]
    fn gauss_hermite_integrates_moments() {
        let (x, w) = gauss_hermite(6).unwrap();
        let m = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
        let sqrt_pi = std::f64::consts::PI.sqrt();
        assert_relative_eq!(m(0), sqrt_pi, epsilon = 1e-13);
        assert_relative_eq!(m(2), sqrt_pi / 2.0, epsilon = 1e-13);
        assert_relative_eq!(m(4), 3.0 * sqrt_pi / 4.0, epsilon = 1e-13);
        assert!(m(3).abs() < 1e-13);
    }

    /// Trapezoid-rule oracle for the 1D roughness of `K''`.
    #[test]
    fn one_dimensional_roughness_matches_quadrature() {
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let step = 1e-3;
        let oracle: f64 = (-12000..=12000)
            .map(|i| {
                let x = i as f64 * step;
                ((x * x - 1.0) * phi(x)).powi(2) * step
            })
            .sum();
        let r = kernel_hessian_roughness(1).unwrap()[(0, 0)];
        assert_relative_eq!(r, oracle, epsilon = 1e-9);
        assert_relative_eq!(r, 3.0 / (8.0 * std::f64::consts::PI.sqrt()), epsilon = 1e-12);
        assert!((r - 0.21157).abs() <= 1e-4);
        assert_relative_eq!(kernel_hessian_covariance(1, 0.4).unwrap()[(0, 0)], 0.4 * r, epsilon = 1e-14);
        assert_eq!(kernel_hessian_covariance(1, 0.0).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn two_dimensional_roughness_matches_grid_quadrature() {
        let r = kernel_hessian_roughness(2).unwrap();
        assert_eq!(r.shape(), (3, 3));
        let pairs = vech_pairs(2);
        let phi2 = |x: f64, y: f64| (-0.5 * (x * x + y * y)).exp() / (2.0 * std::f64::consts::PI);
        let step = 0.02;
        let mut oracle = DMatrix::<f64>::zeros(3, 3);
        for i in -500..=500 {
            for j in -500..=500 {
                let (x, y) = (i as f64 * step, j as f64 * step);
                let p = [x, y];
                let k = phi2(x, y);
                let v: Vec<f64> = pairs
                    .iter()
                    .map(|&(a, b)| (p[a] * p[b] - f64::from(u8::from(a == b))) * k)
                    .collect();
                for a in 0..3 {
                    for b in 0..3 {
                        oracle[(a, b)] += v[a] * v[b] * step * step;
                    }
                }
            }
        }
        assert!((&r - &oracle).amax() <= 1e-8, "{r} vs {oracle}");
        assert!(r.diagonal().iter().all(|v| *v > 0.0));
        let eig = spectrum(&r).unwrap();
        assert!(eig.values.iter().all(|v| *v >= -1e-12));
    }

    #[test]
    fn duplication_maps_vech_to_vec() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let vech = DVector::from_iterator(6, vech_pairs(3).iter().map(|&(r, c)| a[(r, c)]));
        let vec = duplication_matrix(3) * vech;
        assert_eq!(vec.as_slice(), a.as_slice());
    }

    #[test]
    fn variance_is_psd_and_scales_with_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let coords: Vec<f64> = (0..200 * 2)
            .map(|i| if i % 2 == 0 { rng.random_range(-1.0..1.0) } else { 0.2 * rng.random_range(-1.0..1.0) })
            .collect();
        let cloud = PointCloud::from_flat(coords.clone(), 2).unwrap();
        let model = DensityModel::new(cloud, 0.3).unwrap();
        let u = signature_variance(&model, &[0.1, 0.0], 1).unwrap();
        assert!((&u.gamma - u.gamma.transpose()).amax() <= 1e-12);
        let eig = spectrum(&u.gamma).unwrap();
        assert!(eig.values.iter().all(|v| *v >= -1e-8 * eig.values[0].abs().max(1.0)));

        // Duplicate every point: same density, twice the sample size.
        let doubled: Vec<f64> = coords.iter().chain(coords.iter()).copied().collect();
        let model2 = DensityModel::new(PointCloud::from_flat(doubled, 2).unwrap(), 0.3).unwrap();
        let u2 = signature_variance(&model2, &[0.1, 0.0], 1).unwrap();
        assert_relative_eq!(u2.stderr.powi(2), u.stderr.powi(2) / 2.0, max_relative = 1e-9);
    }

    proptest! {
        #[test]
        fn signature_is_nonnegative_and_homogeneous(
            mut lambda in prop::collection::vec(-10.0f64..10.0, 1..6),
            c in 0.01f64..100.0,
        ) {
            lambda.sort_by(|a, b| b.total_cmp(a));
            let s = signature_vector(&lambda).0;
            prop_assert_eq!(&s, &oracle_signature(&lambda));
            for (j, v) in s.iter().enumerate() {
                prop_assert!(*v >= 0.0);
                if lambda[j] >= 0.0 {
                    prop_assert_eq!(*v, 0.0);
                }
            }
            let scaled: Vec<f64> = lambda.iter().map(|l| l * c).collect();
            let sc = signature_vector(&scaled).0;
            for (a, b) in sc.iter().zip(&s) {
                prop_assert!((a - c * b).abs() <= 1e-9 * (c * b).abs().max(1e-12));
            }
        }

        #[test]
        fn jacobian_is_scale_invariant(
            mut lambda in prop::collection::vec(-10.0f64..-0.1, 2..5),
            c in 0.1f64..10.0,
        ) {
            lambda.sort_by(|a, b| b.total_cmp(a));
            prop_assume!(lambda.windows(2).all(|w| w[0] - w[1] > 1e-3));
            let j = signature_jacobian(&lambda).unwrap();
            let scaled: Vec<f64> = lambda.iter().map(|l| l * c).collect();
            let jc = signature_jacobian(&scaled).unwrap();
            prop_assert!((j - jc).amax() <= 1e-9);
        }
    }
}
