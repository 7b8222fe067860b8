//! Dense batch inference over the stacked vector `(x_0..x_T, y_0..y_T)`.

use nalgebra::{Cholesky, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::reduction::StateSpaceModel;

/// Largest stacked dimension [`build_joint`] accepts.
pub const JOINT_SIZE_LIMIT: usize = 2000;

/// Eigenvalues below this fraction of the largest one are treated as zero
/// in the pseudoinverse.
pub const PINV_THRESHOLD: f64 = 1e-10;

/// Mean and covariance of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMoments<T: nalgebra::Scalar = f64> {
    pub mean: Vector<T>,
    pub cov: Matrix<T>,
}

/// Joint law of all states followed by all observations.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseJointLaw {
    pub n: usize,
    pub obs_dim: usize,
    pub steps: usize,
    pub mean: Vector<f64>,
    pub cov: Matrix<f64>,
}

impl DenseJointLaw {
    pub fn state_len(&self) -> usize {
        self.steps * self.n
    }

    pub fn obs_len(&self) -> usize {
        self.steps * self.obs_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPosterior {
    /// Stacked `x_{0:T}` given all observations.
    pub mean: Vector<f64>,
    pub cov: Matrix<f64>,
    /// `log p(y_{0:T})`; NaN if the observation covariance is not positive
    /// definite.
    pub logdensity: f64,
}

impl BatchPosterior {
    /// Moments of the state at time `t` for state dimension `n`.
    pub fn state(&self, n: usize, t: usize) -> StateMoments {
        StateMoments {
            mean: self.mean.rows(t * n, n).into_owned(),
            cov: self.cov.view((t * n, t * n), (n, n)).into_owned(),
        }
    }
}

/// Unrolls the model into the exact joint Gaussian of states and
/// observations, as a linear map from the stacked noise `(u_{0:T}, w_{0:T})`.
pub fn build_joint(model: &StateSpaceModel<f64>) -> Result<DenseJointLaw> {
    let (n, m, r) = (model.n, model.obs_dim(), model.r);
    let steps = model.num_steps() + 1;
    let size = steps * (n + m);
    if size > JOINT_SIZE_LIMIT {
        return Err(Error::SizeLimit { size, limit: JOINT_SIZE_LIMIT });
    }
    let (xs, ys) = (steps * n, steps * m);
    let w0 = steps * n;
    let mut map = Matrix::zeros(xs + ys, w0 + steps * r);
    let mut state = Matrix::zeros(n, w0);
    for t in 0..steps {
        state = if t == 0 { state } else { &model.phi[t] * &state };
        let mut own = state.view_mut((0, t * n), (n, n));
        own += &model.q[t];
        map.view_mut((t * n, 0), (n, w0)).copy_from(&state);
        map.view_mut((xs + t * m, 0), (m, w0)).copy_from(&(&model.c[t] * &state));
        map.view_mut((xs + t * m, w0 + t * r), (m, r)).copy_from(&model.f[t]);
    }
    let cov = &map * map.transpose();
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(DenseJointLaw { n, obs_dim: m, steps, mean: Vector::zeros(xs + ys), cov })
}

/// Pseudoinverse conditioning of all states on the stacked observations.
pub fn batch_condition(joint: &DenseJointLaw, observed: &Vector<f64>) -> Result<BatchPosterior> {
    let (xs, ys) = (joint.state_len(), joint.obs_len());
    if observed.len() != ys {
        return Err(Error::DimensionMismatch(format!(
            "{} stacked observation values, expected {ys}",
            observed.len()
        )));
    }
    let sxx = joint.cov.view((0, 0), (xs, xs));
    let sxy = joint.cov.view((0, xs), (xs, ys));
    let syy = joint.cov.view((xs, xs), (ys, ys)).into_owned();
    let resid = observed - joint.mean.rows(xs, ys);

    let eig = SymmetricEigen::new(syy.clone());
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let inv = eig.eigenvalues.map(|l| if l > PINV_THRESHOLD * top { 1.0 / l } else { 0.0 });
    let vecs = &eig.eigenvectors;
    let pinv = vecs * Matrix::from_diagonal(&inv) * vecs.transpose();

    let gain = sxy * &pinv;
    let mean = joint.mean.rows(0, xs) + &gain * &resid;
    let cov = sxx - &gain * sxy.transpose();
    let cov = (&cov + cov.transpose()) * 0.5;

    let logdensity = match Cholesky::new(syy) {
        Some(chol) => {
            let l = chol.l();
            let z = l.solve_lower_triangular(&resid).expect("nonzero Cholesky diagonal");
            let logdet: f64 = l.diagonal().iter().map(|d| d.ln()).sum();
            -0.5 * ys as f64 * (2.0 * std::f64::consts::PI).ln() - logdet - 0.5 * z.norm_squared()
        }
        None => f64::NAN,
    };
    Ok(BatchPosterior { mean, cov, logdensity })
}

/// Stacks an observation sequence into one vector.
pub fn stack(obs: &[Vector<f64>]) -> Vector<f64> {
    let len = obs.iter().map(|y| y.len()).sum();
    Vector::from_iterator(len, obs.iter().flat_map(|y| y.iter().copied()))
}

/// `p(x_t | y_{0:t})` for every `t`, each from its own batch problem.
pub fn filtering_oracle(model: &StateSpaceModel<f64>, obs: &[Vector<f64>]) -> Result<Vec<StateMoments>> {
    check_len(model, obs)?;
    (0..obs.len())
        .map(|t| {
            let joint = build_joint(&model.truncated(t))?;
            Ok(batch_condition(&joint, &stack(&obs[..=t]))?.state(model.n, t))
        })
        .collect()
}

/// `p(x_t | y_{0:T})` for every `t` and `log p(y_{0:T})`.
pub fn smoothing_oracle(model: &StateSpaceModel<f64>, obs: &[Vector<f64>]) -> Result<(Vec<StateMoments>, f64)> {
    check_len(model, obs)?;
    let post = batch_condition(&build_joint(model)?, &stack(obs))?;
    let states = (0..obs.len()).map(|t| post.state(model.n, t)).collect();
    Ok((states, post.logdensity))
}

fn check_len(model: &StateSpaceModel<f64>, obs: &[Vector<f64>]) -> Result<()> {
    if obs.len() != model.num_steps() + 1 {
        return Err(Error::DimensionMismatch(format!(
            "{} observations for a model with {} time steps",
            obs.len(),
            model.num_steps() + 1
        )));
    }
    Ok(())
}
