//! Square-root filter on the original, unreduced state.

use crate::error::{Error, Result};
use crate::estimation::{EstimationOutput, LoglikIncrement};
use crate::gaussian::{bayes_update, marginalize, marginalize_and_condition, AffineGaussianMap, CholGaussian};
use crate::linalg::{Real, Vector};
use crate::reduction::StateSpaceModel;

/// Filters the full `n`-dimensional state with the QR-based conditioning
/// primitives applied directly to `(phi, q, c, f)`.
///
/// The raw `q` and `f` are used as noise factors without triangularizing
/// them first; only `q q^T` and `f f^T` enter the result. Each step's log
/// evidence is stored in `unconstrained`, with `constrained` set to zero.
pub fn unreduced_robust_filter<T: Real>(
    model: &StateSpaceModel<T>,
    obs: &[Vector<T>],
    store_backward: bool,
) -> Result<EstimationOutput<T>> {
    model.validate()?;
    if obs.len() != model.num_steps() + 1 {
        return Err(Error::DimensionMismatch(format!(
            "{} observations for a model with {} time steps",
            obs.len(),
            model.num_steps() + 1
        )));
    }
    let n = model.n;
    let mut out = EstimationOutput {
        filter_marginals: Vec::with_capacity(obs.len()),
        backward_kernels: Vec::new(),
        loglik_increments: Vec::with_capacity(obs.len()),
        smooth_marginals: None,
        reconstructed: None,
    };
    let mut dist = CholGaussian::from_any_factor(Vector::zeros(n), &model.q[0])?;
    for (t, y) in obs.iter().enumerate() {
        let mut step = || -> Result<T> {
            if t > 0 {
                let transition = AffineGaussianMap {
                    lin: model.phi[t].clone(),
                    offset: Vector::zeros(n),
                    noise_factor: model.q[t].clone(),
                };
                dist = if store_backward {
                    let res = marginalize_and_condition(&dist, &transition)?;
                    out.backward_kernels.push(res.backward);
                    res.marginal
                } else {
                    marginalize(&transition, &dist)?
                };
            }
            let likelihood = AffineGaussianMap {
                lin: model.c[t].clone(),
                offset: Vector::zeros(model.obs_dim()),
                noise_factor: model.f[t].clone(),
            };
            let (post, evidence) = bayes_update(&dist, &likelihood, y)?;
            dist = post;
            Ok(evidence)
        };
        let evidence = step().map_err(|e| e.at_step(t))?;
        out.filter_marginals.push(dist.clone());
        out.loglik_increments.push(LoglikIncrement { constrained: T::zero(), unconstrained: evidence });
    }
    Ok(out)
}
