//! Gaussians in square-root form and QR-based conditioning.
//!
//! Nothing in this module forms a covariance product `L L^T`. Marginals and
//! conditionals come out of one LQ factorization of the joint Cholesky
//! factor
//!
//! ```text
//! [ A L  B ]   [ L1  0  ]
//! [ L    0 ] = [ L*  L2 ] T
//! ```
//!
//! followed by a triangular solve for the gain `K = L* L1^-1`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{
    solve_triangular_right, solve_triangular_vec, tria, Matrix, Real, Triangle, TriangularFactor,
    Vector,
};

/// `N(mean, cov_factor cov_factor^T)` with a lower-trapezoidal `k x q`
/// factor, `q <= k`. A factor with `q < k` columns (or zero diagonal
/// entries) describes a rank-deficient Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct CholGaussian<T: Real> {
    mean: Vector<T>,
    cov_factor: Matrix<T>,
}

impl<T: Real> CholGaussian<T> {
    pub fn new(mean: Vector<T>, cov_factor: Matrix<T>) -> Result<Self> {
        let (k, q) = cov_factor.shape();
        if mean.len() != k || q > k {
            return Err(Error::DimensionMismatch(format!(
                "mean of length {} with a {k}x{q} covariance factor",
                mean.len()
            )));
        }
        TriangularFactor::new(cov_factor.clone(), Triangle::Lower)?;
        Ok(Self { mean, cov_factor })
    }

    /// Builds a Gaussian from any factor `M` with covariance `M M^T`,
    /// re-triangularizing it.
    pub fn from_any_factor(mean: Vector<T>, factor: &Matrix<T>) -> Result<Self> {
        if mean.len() != factor.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "mean of length {} with a factor of {} rows",
                mean.len(),
                factor.nrows()
            )));
        }
        Ok(Self { mean, cov_factor: tria(factor) })
    }

    pub fn standard(k: usize) -> Self {
        Self { mean: Vector::zeros(k), cov_factor: Matrix::identity(k, k) }
    }

    pub fn mean(&self) -> &Vector<T> {
        &self.mean
    }

    pub fn cov_factor(&self) -> &Matrix<T> {
        &self.cov_factor
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_square(&self) -> bool {
        self.cov_factor.ncols() == self.cov_factor.nrows()
    }

    /// Dense covariance. Only for reporting and tests; the algorithms never
    /// call this.
    pub fn covariance(&self) -> Matrix<T> {
        &self.cov_factor * self.cov_factor.transpose()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector<T> {
        let eps = Vector::from_fn(self.cov_factor.ncols(), |_, _| {
            nalgebra::convert::<f64, T>(rng.sample::<f64, _>(StandardNormal))
        });
        &self.mean + &self.cov_factor * eps
    }

    fn square_factor(&self) -> Result<TriangularFactor<T>> {
        if !self.is_square() {
            return Err(Error::NonSquareFactor {
                rows: self.cov_factor.nrows(),
                cols: self.cov_factor.ncols(),
            });
        }
        Ok(TriangularFactor::from_masked(self.cov_factor.clone(), Triangle::Lower))
    }
}

/// The conditional `y | x ~ N(lin x + offset, noise_factor noise_factor^T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGaussianMap<T: Real> {
    pub lin: Matrix<T>,
    pub offset: Vector<T>,
    pub noise_factor: Matrix<T>,
}

impl<T: Real> AffineGaussianMap<T> {
    /// Checks shapes and that the noise factor is lower-trapezoidal.
    pub fn new(lin: Matrix<T>, offset: Vector<T>, noise_factor: Matrix<T>) -> Result<Self> {
        let j = lin.nrows();
        if offset.len() != j || noise_factor.nrows() != j {
            return Err(Error::DimensionMismatch(format!(
                "map with {j} output rows, offset of length {} and a noise factor with {} rows",
                offset.len(),
                noise_factor.nrows()
            )));
        }
        TriangularFactor::new(noise_factor.clone(), Triangle::Lower)?;
        Ok(Self { lin, offset, noise_factor })
    }

    pub fn source_dim(&self) -> usize {
        self.lin.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.lin.nrows()
    }

    /// `lin * x + offset`.
    pub fn mean_at(&self, x: &Vector<T>) -> Vector<T> {
        &self.lin * x + &self.offset
    }

    /// The conditional distribution at a fixed source value.
    pub fn evaluate(&self, x: &Vector<T>) -> CholGaussian<T> {
        CholGaussian { mean: self.mean_at(x), cov_factor: tria(&self.noise_factor) }
    }
}

/// Output of [`marginalize_and_condition`]: the marginal of `y` and the
/// backward kernel `x | y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningResult<T: Real> {
    pub marginal: CholGaussian<T>,
    pub backward: AffineGaussianMap<T>,
}

/// Square blocks of the triangularized joint factor.
struct JointFactor<T: Real> {
    predicted_mean: Vector<T>,
    l1: TriangularFactor<T>,
    l_star: Matrix<T>,
    l2: Matrix<T>,
}

fn check_dims<T: Real>(prior: &CholGaussian<T>, map: &AffineGaussianMap<T>) -> Result<()> {
    if map.source_dim() != prior.dim() {
        return Err(Error::DimensionMismatch(format!(
            "map takes inputs of dimension {} but the prior has dimension {}",
            map.source_dim(),
            prior.dim()
        )));
    }
    Ok(())
}

fn joint_factor<T: Real>(prior: &CholGaussian<T>, map: &AffineGaussianMap<T>) -> Result<JointFactor<T>> {
    check_dims(prior, map)?;
    prior.square_factor()?;
    let k = prior.dim();
    let j = map.target_dim();
    let p = map.noise_factor.ncols();
    // Zero columns keep L2 square when the noise factor has fewer than j
    // columns (a singular observation).
    let width = k + p.max(j);
    let mut joint = Matrix::zeros(j + k, width);
    joint.view_mut((0, 0), (j, k)).copy_from(&(&map.lin * &prior.cov_factor));
    joint.view_mut((0, k), (j, p)).copy_from(&map.noise_factor);
    joint.view_mut((j, 0), (k, k)).copy_from(&prior.cov_factor);
    let lower = tria(&joint);
    let l1 = TriangularFactor::from_masked(lower.view((0, 0), (j, j)).into_owned(), Triangle::Lower);
    let l_star = lower.view((j, 0), (k, j)).into_owned();
    let l2 = lower.view((j, j), (k, k)).into_owned();
    Ok(JointFactor { predicted_mean: map.mean_at(&prior.mean), l1, l_star, l2 })
}

/// Marginal `p(y)` and backward kernel `p(x | y)` for `x ~ prior` and
/// `y | x ~ map`.
///
/// The prior must have a square factor. Fails with
/// [`Error::SingularTriangular`] if the marginal factor of `y` is singular.
pub fn marginalize_and_condition<T: Real>(
    prior: &CholGaussian<T>,
    map: &AffineGaussianMap<T>,
) -> Result<ConditioningResult<T>> {
    let jf = joint_factor(prior, map)?;
    let gain = solve_triangular_right(&jf.l1, &jf.l_star)?;
    let offset = &prior.mean - &gain * &jf.predicted_mean;
    Ok(ConditioningResult {
        marginal: CholGaussian { mean: jf.predicted_mean, cov_factor: jf.l1.into_matrix() },
        backward: AffineGaussianMap { lin: gain, offset, noise_factor: jf.l2 },
    })
}

/// Bayes' rule: the posterior of `x` given `y = observed` and the log
/// evidence `log p(observed)`.
pub fn bayes_update<T: Real>(
    prior: &CholGaussian<T>,
    map: &AffineGaussianMap<T>,
    observed: &Vector<T>,
) -> Result<(CholGaussian<T>, T)> {
    if observed.len() != map.target_dim() {
        return Err(Error::DimensionMismatch(format!(
            "observation of length {} for a map with {} outputs",
            observed.len(),
            map.target_dim()
        )));
    }
    let jf = joint_factor(prior, map)?;
    let innovation = observed - &jf.predicted_mean;
    let whitened = solve_triangular_vec(&jf.l1, &innovation)?;
    let mean = &prior.mean + &jf.l_star * &whitened;
    let log_evidence = logpdf_whitened(&jf.l1, &whitened);
    Ok((CholGaussian { mean, cov_factor: jf.l2 }, log_evidence))
}

/// Push-forward of `dist` through `map`: `N(A m + b, A L L^T A^T + B B^T)`,
/// with the factor obtained from one LQ of `[A L | B]`.
pub fn marginalize<T: Real>(map: &AffineGaussianMap<T>, dist: &CholGaussian<T>) -> Result<CholGaussian<T>> {
    check_dims(dist, map)?;
    let j = map.target_dim();
    let q = dist.cov_factor.ncols();
    let p = map.noise_factor.ncols();
    let mut block = Matrix::zeros(j, q + p);
    block.view_mut((0, 0), (j, q)).copy_from(&(&map.lin * &dist.cov_factor));
    block.view_mut((0, q), (j, p)).copy_from(&map.noise_factor);
    Ok(CholGaussian { mean: map.mean_at(&dist.mean), cov_factor: tria(&block) })
}

/// Log-density of a Gaussian with a square factor, via forward substitution.
pub fn gaussian_logpdf<T: Real>(dist: &CholGaussian<T>, point: &Vector<T>) -> Result<T> {
    if point.len() != dist.dim() {
        return Err(Error::DimensionMismatch(format!(
            "point of length {} for a Gaussian of dimension {}",
            point.len(),
            dist.dim()
        )));
    }
    let l = dist.square_factor()?;
    let whitened = solve_triangular_vec(&l, &(point - &dist.mean))?;
    Ok(logpdf_whitened(&l, &whitened))
}

fn logpdf_whitened<T: Real>(l: &TriangularFactor<T>, whitened: &Vector<T>) -> T {
    let k = whitened.len();
    let half = nalgebra::convert::<f64, T>(0.5);
    let dim = nalgebra::convert::<f64, T>(k as f64);
    let mut logdet = T::zero();
    for i in 0..k {
        logdet += l.matrix()[(i, i)].abs().ln();
    }
    -half * dim * T::two_pi().ln() - logdet - half * whitened.norm_squared()
}
