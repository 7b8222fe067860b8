//! Online filtering, smoothing and marginal likelihood on a reduced model.
//!
//! At each step `t >= 1` the filter
//!
//! 1. conditions `x^u_{t-1}` on the constrained observation `yc_t`,
//! 2. propagates through the reduced transition (keeping the backward
//!    kernel when smoothing), and
//! 3. conditions `x^u_t` on the unconstrained observation `yu_t`.
//!
//! Steps 1 and 3 each contribute one log-likelihood increment. The total is
//! accumulated in ascending `t`, constrained before unconstrained.

use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::{
    bayes_update, gaussian_logpdf, marginalize, marginalize_and_condition, AffineGaussianMap,
    CholGaussian,
};
use crate::linalg::{Real, Vector};
use crate::reduction::{reconstruct_state, transform_observation, ReducedModel, ReducedStep};

/// Log-likelihood contributions of one time step:
/// `log p(yc_t | past)` and `log p(yu_t | yc_t, past)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoglikIncrement<T> {
    pub constrained: T,
    pub unconstrained: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationOutput<T: Real> {
    /// `p(x^u_t | y_{0:t})` for `t = 0..=T`.
    pub filter_marginals: Vec<CholGaussian<T>>,
    /// Entry `t - 1` maps `x^u_t` to the law of `x^u_{t-1}`. Empty unless
    /// the filter ran with `store_backward`.
    pub backward_kernels: Vec<AffineGaussianMap<T>>,
    pub loglik_increments: Vec<LoglikIncrement<T>>,
    /// `p(x^u_t | y_{0:T})`, filled by [`smooth`].
    pub smooth_marginals: Option<Vec<CholGaussian<T>>>,
    /// Full-state marginals, filled by [`reconstruct_all`].
    pub reconstructed: Option<Vec<CholGaussian<T>>>,
}

impl<T: Real> EstimationOutput<T> {
    /// Sum of all increments in the fixed accumulation order.
    pub fn total_loglik(&self) -> T {
        let mut total = T::zero();
        for inc in &self.loglik_increments {
            total += inc.constrained;
            total += inc.unconstrained;
        }
        total
    }

    /// Smoothing marginals if present, otherwise filtering marginals.
    pub fn best_marginals(&self) -> &[CholGaussian<T>] {
        self.smooth_marginals.as_deref().unwrap_or(&self.filter_marginals)
    }
}

/// Filtering distribution of `x^u_t` after all observations up to `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState<T: Real> {
    pub t: usize,
    pub dist: CholGaussian<T>,
    pub loglik: T,
    prev_yc: Vector<T>,
}

fn constrained_map<T: Real>(step: &ReducedStep<T>, prev_yc: &Vector<T>) -> AffineGaussianMap<T> {
    AffineGaussianMap {
        lin: step.lam1.clone().expect("transition block at t >= 1"),
        offset: step.lam2.as_ref().expect("transition block at t >= 1") * prev_yc,
        noise_factor: step.cons_noise.clone(),
    }
}

fn transition_map<T: Real>(step: &ReducedStep<T>, prev_yc: &Vector<T>, yc: &Vector<T>) -> AffineGaussianMap<T> {
    AffineGaussianMap {
        lin: step.psi1.clone().expect("transition block at t >= 1"),
        offset: step.psi2.as_ref().expect("transition block at t >= 1") * prev_yc + &step.gain * yc,
        noise_factor: step.trans_noise.clone(),
    }
}

fn unconstrained_update<T: Real>(
    step: &ReducedStep<T>,
    predicted: CholGaussian<T>,
    yc: &Vector<T>,
    yu: &Vector<T>,
) -> Result<(CholGaussian<T>, T)> {
    if yu.is_empty() {
        return Ok((predicted, T::zero()));
    }
    let map = AffineGaussianMap {
        lin: step.obs_c.clone(),
        offset: &step.obs_offset * yc,
        noise_factor: step.obs_noise.clone(),
    };
    bayes_update(&predicted, &map, yu)
}

impl<T: Real> FilterState<T> {
    /// Processes `y_0`: evaluates `p(yc_0)`, builds the prior of `x^u_0`
    /// given `yc_0` and conditions on `yu_0`.
    pub fn initialize(red: &ReducedModel<T>, y0: &Vector<T>) -> Result<(Self, LoglikIncrement<T>)> {
        Self::initialize_inner(red, y0).map_err(|e| e.at_step(0))
    }

    fn initialize_inner(red: &ReducedModel<T>, y0: &Vector<T>) -> Result<(Self, LoglikIncrement<T>)> {
        let step = &red.steps[0];
        let (yc, yu) = transform_observation(red, 0, y0)?;
        let constrained = if yc.is_empty() {
            T::zero()
        } else {
            let law = CholGaussian::new(Vector::zeros(yc.len()), step.cons_noise.clone())?;
            gaussian_logpdf(&law, &yc)?
        };
        let prior = CholGaussian::new(&step.gain * &yc, step.trans_noise.clone())?;
        let (dist, unconstrained) = unconstrained_update(step, prior, &yc, &yu)?;
        let inc = LoglikIncrement { constrained, unconstrained };
        let mut loglik = T::zero();
        loglik += constrained;
        loglik += unconstrained;
        Ok((Self { t: 0, dist, loglik, prev_yc: yc }, inc))
    }

    /// Moves from `t - 1` to `t` with observation `y`. Returns the
    /// likelihood increment and, if requested, the backward kernel
    /// `x^u_t -> x^u_{t-1}`.
    pub fn advance(
        &mut self,
        red: &ReducedModel<T>,
        y: &Vector<T>,
        store_backward: bool,
    ) -> Result<(LoglikIncrement<T>, Option<AffineGaussianMap<T>>)> {
        let t = self.t + 1;
        self.advance_inner(red, t, y, store_backward).map_err(|e| e.at_step(t))
    }

    fn advance_inner(
        &mut self,
        red: &ReducedModel<T>,
        t: usize,
        y: &Vector<T>,
        store_backward: bool,
    ) -> Result<(LoglikIncrement<T>, Option<AffineGaussianMap<T>>)> {
        let step = red.steps.get(t).ok_or_else(|| {
            Error::DimensionMismatch(format!("no reduced step {t}; model ends at {}", red.num_steps()))
        })?;
        let (yc, yu) = transform_observation(red, t, y)?;

        let (conditioned, constrained) = if yc.is_empty() {
            (self.dist.clone(), T::zero())
        } else {
            bayes_update(&self.dist, &constrained_map(step, &self.prev_yc), &yc)?
        };

        let transition = transition_map(step, &self.prev_yc, &yc);
        let (predicted, kernel) = if store_backward {
            let res = marginalize_and_condition(&conditioned, &transition)?;
            (res.marginal, Some(res.backward))
        } else {
            (marginalize(&transition, &conditioned)?, None)
        };

        let (dist, unconstrained) = unconstrained_update(step, predicted, &yc, &yu)?;
        self.loglik += constrained;
        self.loglik += unconstrained;
        self.dist = dist;
        self.prev_yc = yc;
        self.t = t;
        Ok((LoglikIncrement { constrained, unconstrained }, kernel))
    }
}

/// Runs the reduced square-root filter over `obs` (`T + 1` raw
/// observations of length `ell + r`).
pub fn filter<T: Real>(
    red: &ReducedModel<T>,
    obs: &[Vector<T>],
    store_backward: bool,
) -> Result<EstimationOutput<T>> {
    if obs.len() != red.steps.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observations for a model with {} time steps",
            obs.len(),
            red.steps.len()
        )));
    }
    let (mut state, inc) = FilterState::initialize(red, &obs[0])?;
    let mut out = EstimationOutput {
        filter_marginals: vec![state.dist.clone()],
        backward_kernels: Vec::new(),
        loglik_increments: vec![inc],
        smooth_marginals: None,
        reconstructed: None,
    };
    for y in &obs[1..] {
        let (inc, kernel) = state.advance(red, y, store_backward)?;
        out.filter_marginals.push(state.dist.clone());
        out.loglik_increments.push(inc);
        out.backward_kernels.extend(kernel);
    }
    Ok(out)
}

/// Fixed-interval smoothing by marginalizing the stored backward kernels
/// from `t = T` down to `t = 0`.
pub fn smooth<T: Real>(mut out: EstimationOutput<T>) -> Result<EstimationOutput<T>> {
    let steps = out.filter_marginals.len();
    if steps == 0 || out.backward_kernels.len() != steps - 1 {
        return Err(Error::DimensionMismatch(format!(
            "smoothing needs {} backward kernels, found {} (run the filter with store_backward)",
            steps.saturating_sub(1),
            out.backward_kernels.len()
        )));
    }
    let mut smoothed = Vec::with_capacity(steps);
    smoothed.push(out.filter_marginals[steps - 1].clone());
    for kernel in out.backward_kernels.iter().rev() {
        let next = marginalize(kernel, smoothed.last().expect("nonempty"))?;
        smoothed.push(next);
    }
    smoothed.reverse();
    out.smooth_marginals = Some(smoothed);
    Ok(out)
}

/// Maps every reduced marginal (smoothing if available, else filtering) to
/// the full state.
pub fn reconstruct_all<T: Real>(
    red: &ReducedModel<T>,
    mut out: EstimationOutput<T>,
    obs: &[Vector<T>],
) -> Result<EstimationOutput<T>> {
    let marginals = out.best_marginals();
    if obs.len() != marginals.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observations for {} marginals",
            obs.len(),
            marginals.len()
        )));
    }
    let mut full = Vec::with_capacity(marginals.len());
    for (t, (m, y)) in marginals.iter().zip(obs).enumerate() {
        let (yc, _) = transform_observation(red, t, y)?;
        full.push(reconstruct_state(red, t, m, &yc)?);
    }
    out.reconstructed = Some(full);
    Ok(out)
}

/// Draws one trajectory `x^u_{0:T}` from the smoothing posterior by
/// sampling the last filtering marginal and walking the backward kernels.
pub fn sample_posterior<T: Real, R: Rng + ?Sized>(out: &EstimationOutput<T>, rng: &mut R) -> Result<Vec<Vector<T>>> {
    let steps = out.filter_marginals.len();
    if steps == 0 || out.backward_kernels.len() != steps - 1 {
        return Err(Error::DimensionMismatch("sampling needs stored backward kernels".into()));
    }
    let mut path = Vec::with_capacity(steps);
    path.push(out.filter_marginals[steps - 1].sample(rng));
    for kernel in out.backward_kernels.iter().rev() {
        let next = kernel.evaluate(path.last().expect("nonempty")).sample(rng);
        path.push(next);
    }
    path.reverse();
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, Matrix};
    use crate::reduction::{reduce_model, StateSpaceModel};
    use crate::simulate::{random_model, simulate};
    use rand::SeedableRng;

    fn axis_model(steps: usize) -> StateSpaceModel<f64> {
        let k = steps + 1;
        StateSpaceModel::new(
            2,
            1,
            0,
            vec![Matrix::identity(2, 2); k],
            vec![Matrix::identity(2, 2); k],
            vec![Matrix::from_row_slice(1, 2, &[1.0, 0.0]); k],
            vec![Matrix::zeros(1, 0); k],
        )
        .unwrap()
    }

    #[test]
    fn axis_aligned_filter_tracks_free_coordinate_prior() {
        let model = axis_model(4);
        let red = reduce_model(&model).unwrap();
        let obs: Vec<_> = [1.0, 2.0, -1.0, 0.5, 3.0].iter().map(|&v| Vector::from_vec(vec![v])).collect();
        let out = reconstruct_all(&red, smooth(filter(&red, &obs, true).unwrap()).unwrap(), &obs).unwrap();
        for inc in &out.loglik_increments {
            assert_eq!(inc.unconstrained, 0.0);
        }
        // The free coordinate is an independent random walk started at zero:
        // its filtering law is N(0, t + 1) regardless of the data.
        for (t, m) in out.filter_marginals.iter().enumerate() {
            assert!(m.mean()[0].abs() < 1e-14);
            assert!((m.covariance()[(0, 0)] - (t + 1) as f64).abs() < 1e-12);
        }
        for (t, full) in out.reconstructed.as_ref().unwrap().iter().enumerate() {
            assert!((full.mean()[0] - obs[t][0]).abs() < 1e-14);
            assert!(full.mean()[1].abs() < 1e-14);
        }
        // the observed coordinate is a random walk with unit increments
        let mut expected = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5;
        for t in 1..5 {
            let d: f64 = obs[t][0] - obs[t - 1][0];
            expected += -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * d * d;
        }
        assert!((out.total_loglik() - expected).abs() < 1e-12);
    }

    #[test]
    fn smoothing_with_no_transitions_equals_filtering() {
        let model = random_model(4, 1, 2, 0, 3);
        let red = reduce_model(&model).unwrap();
        let obs = simulate(&model, 1, false).y;
        let out = smooth(filter(&red, &obs, true).unwrap()).unwrap();
        assert_eq!(out.smooth_marginals.as_ref().unwrap(), &out.filter_marginals);
    }

    #[test]
    fn last_smoothing_marginal_is_last_filtering_marginal() {
        let model = random_model(5, 2, 1, 6, 4);
        let red = reduce_model(&model).unwrap();
        let obs = simulate(&model, 2, false).y;
        let out = smooth(filter(&red, &obs, true).unwrap()).unwrap();
        assert_eq!(out.smooth_marginals.as_ref().unwrap().last(), out.filter_marginals.last());
        let mut acc = 0.0;
        for inc in &out.loglik_increments {
            acc += inc.constrained;
            acc += inc.unconstrained;
        }
        assert_eq!(acc.to_bits(), out.total_loglik().to_bits());
    }

    #[test]
    fn filter_without_kernels_cannot_smooth() {
        let model = random_model(3, 1, 1, 2, 5);
        let red = reduce_model(&model).unwrap();
        let obs = simulate(&model, 3, false).y;
        let out = filter(&red, &obs, false).unwrap();
        assert!(out.backward_kernels.is_empty());
        assert!(smooth(out).is_err());
        assert!(filter(&red, &obs[..2], false).is_err());
    }

    #[test]
    fn storing_kernels_does_not_change_filtering() {
        let model = random_model(6, 2, 2, 5, 6);
        let red = reduce_model(&model).unwrap();
        let obs = simulate(&model, 4, false).y;
        let a = filter(&red, &obs, false).unwrap();
        let b = filter(&red, &obs, true).unwrap();
        for (x, y) in a.filter_marginals.iter().zip(&b.filter_marginals) {
            assert!((x.mean() - y.mean()).amax() < 1e-10);
            assert!(max_abs_diff(&x.covariance(), &y.covariance()) < 1e-10);
        }
        assert!((a.total_loglik() - b.total_loglik()).abs() < 1e-10);
    }

    #[test]
    fn deterministic_chain_smooths_back_exactly() {
        // Hand-built reduced model: d = 1, ell = 0, r = 1, identity
        // transition without noise.
        let one = Matrix::from_element(1, 1, 1.0);
        let empty = |r, c| Matrix::<f64>::zeros(r, c);
        let step = |first: bool| ReducedStep {
            psi1: (!first).then(|| one.clone()),
            psi2: (!first).then(|| empty(1, 0)),
            lam1: (!first).then(|| empty(0, 1)),
            lam2: (!first).then(|| empty(0, 0)),
            gain: empty(1, 0),
            trans_noise: if first { one.clone() } else { empty(1, 1) },
            cons_noise: empty(0, 0),
            obs_c: one.clone(),
            obs_offset: empty(1, 0),
            obs_noise: one.clone(),
            recon_w: one.clone(),
            recon_offset: empty(1, 0),
            v_u: one.clone(),
            v_c: empty(1, 0),
        };
        let red = ReducedModel::from_steps(1, 0, 1, vec![step(true), step(false), step(false)]).unwrap();
        let obs: Vec<_> = [0.3, 0.9, -0.2].iter().map(|&v| Vector::from_vec(vec![v])).collect();
        let out = smooth(filter(&red, &obs, true).unwrap()).unwrap();
        let sm = out.smooth_marginals.unwrap();
        for t in 0..2 {
            assert!((sm[t].mean() - sm[t + 1].mean()).amax() < 1e-15);
            assert!(max_abs_diff(&sm[t].covariance(), &sm[t + 1].covariance()) < 1e-15);
        }
        // constant x ~ N(0, 1) seen through three unit-noise observations
        assert!((sm[0].mean()[0] - (0.3 + 0.9 - 0.2) / 4.0).abs() < 1e-15);
        assert!((sm[0].covariance()[(0, 0)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn posterior_samples_have_right_shape_and_mean() {
        let model = random_model(4, 1, 1, 3, 7);
        let red = reduce_model(&model).unwrap();
        let obs = simulate(&model, 5, false).y;
        let out = smooth(filter(&red, &obs, true).unwrap()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let draws = 20_000;
        let mut acc = vec![Vector::zeros(3); 4];
        for _ in 0..draws {
            let path = sample_posterior(&out, &mut rng).unwrap();
            assert_eq!(path.len(), 4);
            for (a, x) in acc.iter_mut().zip(&path) {
                *a += x;
            }
        }
        for (a, m) in acc.iter().zip(out.smooth_marginals.as_ref().unwrap()) {
            let sd = m.covariance().diagonal().map(f64::sqrt);
            let err = (a / draws as f64 - m.mean()).component_div(&sd);
            assert!(err.amax() < 0.05, "standardized error {}", err.amax());
        }
    }

    #[test]
    fn fully_constrained_state() {
        // ell = n: the reduced state is empty and only yc carries likelihood.
        let model = random_model(3, 3, 0, 3, 9);
        let red = reduce_model(&model).unwrap();
        let obs = simulate(&model, 6, false).y;
        let out = reconstruct_all(&red, smooth(filter(&red, &obs, true).unwrap()).unwrap(), &obs).unwrap();
        assert!(out.total_loglik().is_finite());
        for (x, full) in simulate(&model, 6, false).x.iter().zip(out.reconstructed.unwrap()) {
            assert!((full.mean() - x).amax() < 1e-9);
        }
    }
}
