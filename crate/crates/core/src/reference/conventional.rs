//! Covariance-form filtering and RTS smoothing on a reduced model.
//!
//! The recursions are the same as in [`crate::estimation`], but every
//! conditioning step forms `S = H P H^T + N N^T` and solves with it
//! through an explicit decomposition. This is the conventional approach
//! and it breaks down on ill-conditioned models; failures are recorded
//! rather than raised.

use nalgebra::{Cholesky, LU};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Real, Vector};
use crate::reduction::{transform_observation, ReducedModel, ReducedStep};
use crate::reference::dense::StateMoments;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Cholesky,
    Lu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConventionalOutput<T: Real> {
    pub filter: Vec<StateMoments<T>>,
    pub smooth: Vec<StateMoments<T>>,
    /// Full-state smoothing moments.
    pub reconstructed: Vec<StateMoments<T>>,
    pub loglik: T,
    /// First time step at which a decomposition failed or a non-finite
    /// value appeared. Later results are NaN.
    pub failed_at: Option<usize>,
}

#[derive(Clone)]
struct Moments<T: Real> {
    mean: Vector<T>,
    cov: Matrix<T>,
}

impl<T: Real> Moments<T> {
    fn nan(d: usize) -> Self {
        Self { mean: Vector::from_element(d, nan()), cov: Matrix::from_element(d, d, nan()) }
    }

    fn is_finite(&self) -> bool {
        self.mean.iter().chain(self.cov.iter()).all(|x| x.is_finite())
    }

    fn into_state(self) -> StateMoments<T> {
        StateMoments { mean: self.mean, cov: self.cov }
    }
}

fn nan<T: Real>() -> T {
    nalgebra::convert(f64::NAN)
}

/// Solves `s x = b` for symmetric `s`; also returns `log det s`.
fn solve<T: Real>(solver: Solver, s: Matrix<T>, b: &Matrix<T>) -> Option<(Matrix<T>, T)> {
    match solver {
        Solver::Cholesky => {
            let chol = Cholesky::new(s)?;
            let two: T = nalgebra::convert(2.0);
            let logdet = chol.l_dirty().diagonal().iter().fold(T::zero(), |a, d| a + d.ln()) * two;
            Some((chol.solve(b), logdet))
        }
        Solver::Lu => {
            let lu = LU::new(s);
            let x = lu.solve(b)?;
            Some((x, lu.determinant().abs().ln()))
        }
    }
}

/// Conditions `x ~ N(m, P)` on `y = H x + offset + N w` with
/// `K = P H^T S^-1` and `P - K S K^T`. Returns `None` if the decomposition
/// fails.
fn update<T: Real>(
    solver: Solver,
    prior: &Moments<T>,
    h: &Matrix<T>,
    offset: &Vector<T>,
    noise: &Matrix<T>,
    y: &Vector<T>,
) -> Option<(Moments<T>, T)> {
    let k = y.len();
    let hp = h * &prior.cov;
    let s = &hp * h.transpose() + noise * noise.transpose();
    let innovation = y - h * &prior.mean - offset;
    let mut rhs = Matrix::zeros(k, hp.ncols() + 1);
    rhs.view_mut((0, 0), (k, hp.ncols())).copy_from(&hp);
    rhs.set_column(hp.ncols(), &innovation);
    let (x, logdet) = solve(solver, s.clone(), &rhs)?;
    let gain = x.columns(0, hp.ncols()).transpose();
    let whitened = x.column(hp.ncols());
    let mean = &prior.mean + hp.tr_mul(&whitened);
    let cov = &prior.cov - &gain * s * gain.transpose();
    let half: T = nalgebra::convert(0.5);
    let kf: T = nalgebra::convert(k as f64);
    let loglik = -half * (kf * T::two_pi().ln() + logdet + innovation.dot(&whitened));
    Some((Moments { mean, cov }, loglik))
}

fn unconstrained_update<T: Real>(
    solver: Solver,
    step: &ReducedStep<T>,
    prior: Moments<T>,
    yc: &Vector<T>,
    yu: &Vector<T>,
) -> Option<(Moments<T>, T)> {
    if yu.is_empty() {
        return Some((prior, T::zero()));
    }
    update(solver, &prior, &step.obs_c, &(&step.obs_offset * yc), &step.obs_noise, yu)
}

/// One forward step record kept for the backward pass.
struct Forward<T: Real> {
    /// Law of `x^u_{t-1}` after conditioning on `yc_t`.
    conditioned: Moments<T>,
    /// Law of `x^u_t` before conditioning on `yu_t`.
    predicted: Moments<T>,
}

/// Covariance-form filter plus RTS smoother on the reduced model, with
/// every linear solve done by `solver`.
pub fn conventional_reduced_smoother<T: Real>(
    red: &ReducedModel<T>,
    obs: &[Vector<T>],
    solver: Solver,
) -> Result<ConventionalOutput<T>> {
    if obs.len() != red.steps.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observations for a model with {} time steps",
            obs.len(),
            red.steps.len()
        )));
    }
    let d = red.reduced_dim();
    let mut split = Vec::with_capacity(obs.len());
    for (t, y) in obs.iter().enumerate() {
        split.push(transform_observation(red, t, y)?);
    }
    let mut failed_at = None;
    let fail = |t: usize, failed_at: &mut Option<usize>| {
        failed_at.get_or_insert(t);
        (Moments::nan(d), nan::<T>())
    };

    let mut loglik = T::zero();
    let mut filtered: Vec<Moments<T>> = Vec::with_capacity(obs.len());
    let mut forward: Vec<Forward<T>> = Vec::with_capacity(obs.len());

    let step0 = &red.steps[0];
    let (yc0, yu0) = &split[0];
    if !yc0.is_empty() {
        // log N(yc_0; 0, N N^T) as an update of an empty state
        let empty = Moments { mean: Vector::zeros(0), cov: Matrix::zeros(0, 0) };
        let ell = yc0.len();
        let (_, inc) = update(solver, &empty, &Matrix::zeros(ell, 0), &Vector::zeros(ell), &step0.cons_noise, yc0)
            .unwrap_or_else(|| fail(0, &mut failed_at));
        loglik += inc;
    }
    let prior = Moments { mean: &step0.gain * yc0, cov: &step0.trans_noise * step0.trans_noise.transpose() };
    let (first, inc) = unconstrained_update(solver, step0, prior, yc0, yu0).unwrap_or_else(|| fail(0, &mut failed_at));
    loglik += inc;
    filtered.push(first);

    for t in 1..obs.len() {
        let step = &red.steps[t];
        let (prev_yc, _) = &split[t - 1];
        let (yc, yu) = &split[t];
        let prev = filtered.last().expect("t >= 1");
        let (conditioned, inc_c) = if yc.is_empty() {
            (prev.clone(), T::zero())
        } else {
            let lam1 = step.lam1.as_ref().expect("transition block at t >= 1");
            let lam2 = step.lam2.as_ref().expect("transition block at t >= 1");
            update(solver, prev, lam1, &(lam2 * prev_yc), &step.cons_noise, yc)
                .unwrap_or_else(|| fail(t, &mut failed_at))
        };
        let psi1 = step.psi1.as_ref().expect("transition block at t >= 1");
        let psi2 = step.psi2.as_ref().expect("transition block at t >= 1");
        let predicted = Moments {
            mean: psi1 * &conditioned.mean + psi2 * prev_yc + &step.gain * yc,
            cov: psi1 * &conditioned.cov * psi1.transpose() + &step.trans_noise * step.trans_noise.transpose(),
        };
        let (next, inc_u) = unconstrained_update(solver, step, predicted.clone(), yc, yu)
            .unwrap_or_else(|| fail(t, &mut failed_at));
        loglik += inc_c;
        loglik += inc_u;
        if failed_at.is_none() && !next.is_finite() {
            failed_at = Some(t);
        }
        forward.push(Forward { conditioned, predicted });
        filtered.push(next);
    }

    // RTS: m_s[t-1] = m' + J (m_s[t] - m^-), J = P' psi1^T (P^-)^-1.
    let last = filtered.last().expect("nonempty");
    let mut smoothed = vec![last.clone()];
    for (k, fw) in forward.iter().enumerate().rev() {
        let t = k + 1;
        let psi1 = red.steps[t].psi1.as_ref().expect("transition block at t >= 1");
        let next = smoothed.last().expect("nonempty");
        let rhs = psi1 * &fw.conditioned.cov;
        let back = match solve(solver, fw.predicted.cov.clone(), &rhs) {
            Some((jt, _)) => {
                let j = jt.transpose();
                Moments {
                    mean: &fw.conditioned.mean + &j * (&next.mean - &fw.predicted.mean),
                    cov: &fw.conditioned.cov + &j * (&next.cov - &fw.predicted.cov) * j.transpose(),
                }
            }
            None => fail(t, &mut failed_at).0,
        };
        smoothed.push(back);
    }
    smoothed.reverse();
    if failed_at.is_none() {
        failed_at = smoothed.iter().position(|m| !m.is_finite());
    }

    let reconstructed = smoothed
        .iter()
        .zip(&split)
        .zip(&red.steps)
        .map(|((m, (yc, _)), step)| StateMoments {
            mean: &step.recon_w * &m.mean + &step.recon_offset * yc,
            cov: &step.recon_w * &m.cov * step.recon_w.transpose(),
        })
        .collect();
    Ok(ConventionalOutput {
        filter: filtered.into_iter().map(Moments::into_state).collect(),
        smooth: smoothed.into_iter().map(Moments::into_state).collect(),
        reconstructed,
        loglik,
        failed_at,
    })
}
