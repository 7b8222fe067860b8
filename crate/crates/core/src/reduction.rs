//! Offline model reduction.
//!
//! A model `x_t = Phi_t x_{t-1} + Q_t u_t`, `y_t = C_t x_t + F_t w_t` whose
//! observation noise factor `F_t` has only `r` columns for `ell + r`
//! observations is rotated so that `ell` observation coordinates (`y^c`)
//! pin down `ell` state coordinates (`x^c`) exactly. Those coordinates are
//! then eliminated, leaving a nonsingular model over the remaining `n - ell`
//! state coordinates (`x^u`). Nothing here looks at observed data.

use crate::error::{Error, Result};
use crate::gaussian::CholGaussian;
use crate::linalg::{
    lq_complete, ql_complete, solve_triangular_right, Matrix, Real, Triangle,
    TriangularFactor, Vector,
};

/// Time-varying linear Gaussian state-space model with standard normal
/// process noise `u_t` (dimension `n`) and observation noise `w_t`
/// (dimension `r`), and `x_{-1} = 0`.
///
/// Each parameter list holds `T + 1` matrices, one per time step:
/// `phi[t]` and `q[t]` are `n x n`, `c[t]` is `(ell + r) x n` and `f[t]` is
/// `(ell + r) x r`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel<T: Real> {
    pub n: usize,
    pub ell: usize,
    pub r: usize,
    pub phi: Vec<Matrix<T>>,
    pub q: Vec<Matrix<T>>,
    pub c: Vec<Matrix<T>>,
    pub f: Vec<Matrix<T>>,
}

impl<T: Real> StateSpaceModel<T> {
    /// Validates list lengths, matrix shapes and `ell + r <= n`.
    ///
    /// Rank conditions are not checked here; [`reduce_model`] reports them
    /// as [`Error::RankDeficient`].
    pub fn new(
        n: usize,
        ell: usize,
        r: usize,
        phi: Vec<Matrix<T>>,
        q: Vec<Matrix<T>>,
        c: Vec<Matrix<T>>,
        f: Vec<Matrix<T>>,
    ) -> Result<Self> {
        let model = Self { n, ell, r, phi, q, c, f };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m, r) = (self.n, self.obs_dim(), self.r);
        if self.ell + r > n {
            return Err(Error::DimensionMismatch(format!(
                "ell + r = {} exceeds the state dimension {n}",
                self.ell + r
            )));
        }
        let len = self.phi.len();
        if len == 0 {
            return Err(Error::DimensionMismatch("model has no time steps".into()));
        }
        for (name, list, shape) in [
            ("phi", &self.phi, (n, n)),
            ("q", &self.q, (n, n)),
            ("c", &self.c, (m, n)),
            ("f", &self.f, (m, r)),
        ] {
            if list.len() != len {
                return Err(Error::DimensionMismatch(format!(
                    "{name} has {} entries, phi has {len}",
                    list.len()
                )));
            }
            if let Some((t, bad)) = list.iter().enumerate().find(|(_, x)| x.shape() != shape) {
                return Err(Error::DimensionMismatch(format!(
                    "{name}[{t}] is {}x{}, expected {}x{}",
                    bad.nrows(),
                    bad.ncols(),
                    shape.0,
                    shape.1
                )));
            }
        }
        Ok(())
    }

    /// Number of transitions `T`; the model covers `T + 1` time steps.
    pub fn num_steps(&self) -> usize {
        self.phi.len() - 1
    }

    pub fn obs_dim(&self) -> usize {
        self.ell + self.r
    }

    /// The same model restricted to time steps `0..=last`.
    pub fn truncated(&self, last: usize) -> Self {
        let keep = |v: &Vec<Matrix<T>>| v[..=last].to_vec();
        Self {
            n: self.n,
            ell: self.ell,
            r: self.r,
            phi: keep(&self.phi),
            q: keep(&self.q),
            c: keep(&self.c),
            f: keep(&self.f),
        }
    }
}

impl StateSpaceModel<f64> {
    /// Converts every parameter to another scalar type, e.g. `f32`.
    pub fn cast<U: Real>(&self) -> StateSpaceModel<U> {
        let cast = |v: &Vec<Matrix<f64>>| v.iter().map(|m| m.map(nalgebra::convert::<f64, U>)).collect();
        StateSpaceModel {
            n: self.n,
            ell: self.ell,
            r: self.r,
            phi: cast(&self.phi),
            q: cast(&self.q),
            c: cast(&self.c),
            f: cast(&self.f),
        }
    }
}

/// All factors of the single-step reduction.
///
/// With `d = n - ell`:
/// `F = [vu vc] [lu; 0]`, `vc^T C = [sc 0] [wc^T; wu^T]`,
/// `[wc^T Q; wu^T Q] = [[zc, 0], [zstar, zu]] [uc^T; uu^T]` and
/// `g zc = zstar`.
#[derive(Debug, Clone, PartialEq)]
pub struct OneStepReduction<T: Real> {
    /// `(ell + r) x r`
    pub vu: Matrix<T>,
    /// `(ell + r) x ell`
    pub vc: Matrix<T>,
    /// `r x r`
    pub lu: TriangularFactor<T>,
    /// `n x ell`
    pub wc: Matrix<T>,
    /// `n x d`
    pub wu: Matrix<T>,
    /// `ell x ell`
    pub sc: TriangularFactor<T>,
    /// `ell x ell`
    pub zc: TriangularFactor<T>,
    /// `d x d`
    pub zu: TriangularFactor<T>,
    /// `d x ell`
    pub zstar: Matrix<T>,
    /// `d x ell`
    pub g: Matrix<T>,
    /// `n x ell`
    pub uc: Matrix<T>,
    /// `n x d`
    pub uu: Matrix<T>,
}

/// Flags a triangular factor whose smallest diagonal entry is negligible
/// relative to its largest one.
fn check_rank<T: Real>(factor: &TriangularFactor<T>, name: &'static str) -> Result<()> {
    let m = factor.matrix();
    let k = m.nrows().min(m.ncols());
    let largest = (0..k).map(|i| m[(i, i)].abs()).fold(T::zero(), |a, b| if b > a { b } else { a });
    let floor = T::default_epsilon() * largest;
    if factor.first_degenerate_diagonal(floor).is_some() {
        return Err(Error::RankDeficient { factor: name, step: None });
    }
    Ok(())
}

fn lower_block<T: Real>(m: &Matrix<T>, start: (usize, usize), shape: (usize, usize)) -> TriangularFactor<T> {
    TriangularFactor::from_masked(m.view(start, shape).into_owned(), Triangle::Lower)
}

/// Reduces the one-step model `x = Phi z + Q u`, `y = C x + F w`.
///
/// Fails with [`Error::RankDeficient`] if `C` does not have full row rank,
/// `Q` is singular or `F` lacks full column rank.
pub fn reduce_one_step<T: Real>(
    phi: &Matrix<T>,
    q: &Matrix<T>,
    c: &Matrix<T>,
    f: &Matrix<T>,
    n: usize,
    ell: usize,
    r: usize,
) -> Result<OneStepReduction<T>> {
    let m = ell + r;
    let d = n - ell.min(n);
    if ell + r > n
        || phi.shape() != (n, n)
        || q.shape() != (n, n)
        || c.shape() != (m, n)
        || f.shape() != (m, r)
    {
        return Err(Error::DimensionMismatch(format!(
            "one-step reduction with n={n}, ell={ell}, r={r} got phi {:?}, q {:?}, c {:?}, f {:?}",
            phi.shape(),
            q.shape(),
            c.shape(),
            f.shape()
        )));
    }

    let (v, lf) = ql_complete(f)?;
    let vc = v.columns(0, ell).into_owned();
    let vu = v.columns(ell, r).into_owned();
    let lu = lower_block(lf.matrix(), (ell, 0), (r, r));

    let (s, w) = lq_complete(&(vc.transpose() * c))?;
    let sc = lower_block(s.matrix(), (0, 0), (ell, ell));
    let wc = w.rows(0, ell).transpose();
    let wu = w.rows(ell, d).transpose();

    let (z, u) = lq_complete(&(&w * q))?;
    let zc = lower_block(z.matrix(), (0, 0), (ell, ell));
    let zu = lower_block(z.matrix(), (ell, ell), (d, d));
    let zstar = z.matrix().view((ell, 0), (d, ell)).into_owned();
    let uc = u.rows(0, ell).transpose();
    let uu = u.rows(ell, d).transpose();

    check_rank(&lu, "L_u (F lacks full column rank)")?;
    check_rank(&sc, "S_c (C lacks full row rank)")?;
    check_rank(&zc, "Z_c (Q is singular)")?;
    check_rank(&zu, "Z_u (Q is singular)")?;

    let g = solve_triangular_right(&zc, &zstar)?;
    Ok(OneStepReduction { vu, vc, lu, wc, wu, sc, zc, zu, zstar, g, uc, uu })
}

/// Per-step matrices of the reduced model.
///
/// With realized constrained observations `yc_t`, the reduced model reads
///
/// ```text
/// yc_0 = cons_noise_0 uc_0
/// yc_t = lam1_t xu_{t-1} + lam2_t yc_{t-1} + cons_noise_t uc_t
/// xu_0 = gain_0 yc_0 + trans_noise_0 uu_0
/// xu_t = psi1_t xu_{t-1} + psi2_t yc_{t-1} + gain_t yc_t + trans_noise_t uu_t
/// yu_t = obs_offset_t yc_t + obs_c_t xu_t + obs_noise_t w_t
/// x_t  = recon_w_t xu_t + recon_offset_t yc_t
/// ```
///
/// where `yc_t = v_c^T y_t` and `yu_t = v_u^T y_t`. The transition blocks
/// (`psi*`, `lam*`) are `None` at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedStep<T: Real> {
    pub psi1: Option<Matrix<T>>,
    pub psi2: Option<Matrix<T>>,
    pub lam1: Option<Matrix<T>>,
    pub lam2: Option<Matrix<T>>,
    /// `G_t S_c^-1`, `d x ell`
    pub gain: Matrix<T>,
    /// `Z_u`, `d x d` lower
    pub trans_noise: Matrix<T>,
    /// `S_c Z_c`, `ell x ell` lower
    pub cons_noise: Matrix<T>,
    /// `V_u^T C W_u`, `r x d`
    pub obs_c: Matrix<T>,
    /// `V_u^T C W_c S_c^-1`, `r x ell`
    pub obs_offset: Matrix<T>,
    /// `L_u`, `r x r` lower
    pub obs_noise: Matrix<T>,
    /// `W_u`, `n x d`
    pub recon_w: Matrix<T>,
    /// `W_c S_c^-1`, `n x ell`
    pub recon_offset: Matrix<T>,
    /// `(ell + r) x r`
    pub v_u: Matrix<T>,
    /// `(ell + r) x ell`
    pub v_c: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedModel<T: Real> {
    pub n: usize,
    pub ell: usize,
    pub r: usize,
    pub steps: Vec<ReducedStep<T>>,
}

impl<T: Real> ReducedModel<T> {
    /// Assembles a reduced model from stored steps, checking every shape.
    pub fn from_steps(n: usize, ell: usize, r: usize, steps: Vec<ReducedStep<T>>) -> Result<Self> {
        let red = Self { n, ell, r, steps };
        red.validate()?;
        Ok(red)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, ell, r) = (self.n, self.ell, self.r);
        if ell + r > n || self.steps.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "reduced model with n={n}, ell={ell}, r={r} and {} steps",
                self.steps.len()
            )));
        }
        let d = n - ell;
        let m = ell + r;
        for (t, s) in self.steps.iter().enumerate() {
            let transition = [
                ("psi1", &s.psi1, (d, d)),
                ("psi2", &s.psi2, (d, ell)),
                ("lam1", &s.lam1, (ell, d)),
                ("lam2", &s.lam2, (ell, ell)),
            ];
            for (name, block, shape) in transition {
                match (t, block) {
                    (0, None) => {}
                    (0, Some(_)) => {
                        return Err(Error::DimensionMismatch(format!("{name} must be absent at t=0")))
                    }
                    (_, None) => {
                        return Err(Error::DimensionMismatch(format!("{name}[{t}] is missing")))
                    }
                    (_, Some(b)) if b.shape() != shape => {
                        return Err(Error::DimensionMismatch(format!(
                            "{name}[{t}] is {:?}, expected {shape:?}",
                            b.shape()
                        )))
                    }
                    _ => {}
                }
            }
            let fixed = [
                ("gain", &s.gain, (d, ell)),
                ("trans_noise", &s.trans_noise, (d, d)),
                ("cons_noise", &s.cons_noise, (ell, ell)),
                ("obs_c", &s.obs_c, (r, d)),
                ("obs_offset", &s.obs_offset, (r, ell)),
                ("obs_noise", &s.obs_noise, (r, r)),
                ("recon_w", &s.recon_w, (n, d)),
                ("recon_offset", &s.recon_offset, (n, ell)),
                ("v_u", &s.v_u, (m, r)),
                ("v_c", &s.v_c, (m, ell)),
            ];
            for (name, b, shape) in fixed {
                if b.shape() != shape {
                    return Err(Error::DimensionMismatch(format!(
                        "{name}[{t}] is {:?}, expected {shape:?}",
                        b.shape()
                    )));
                }
            }
            for (name, b) in [("trans_noise", &s.trans_noise), ("cons_noise", &s.cons_noise), ("obs_noise", &s.obs_noise)] {
                TriangularFactor::new(b.clone(), Triangle::Lower)
                    .map_err(|_| Error::DimensionMismatch(format!("{name}[{t}] is not lower triangular")))?;
            }
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len() - 1
    }

    /// Dimension `n - ell` of the reduced state.
    pub fn reduced_dim(&self) -> usize {
        self.n - self.ell
    }

    pub fn obs_dim(&self) -> usize {
        self.ell + self.r
    }
}

/// Runs the one-step reduction at every time step and assembles the
/// reduced transition and observation blocks.
///
/// Errors carry the offending time step.
pub fn reduce_model<T: Real>(model: &StateSpaceModel<T>) -> Result<ReducedModel<T>> {
    model.validate()?;
    let (n, ell, r) = (model.n, model.ell, model.r);
    let mut steps: Vec<ReducedStep<T>> = Vec::with_capacity(model.phi.len());
    for t in 0..model.phi.len() {
        let one = reduce_one_step(&model.phi[t], &model.q[t], &model.c[t], &model.f[t], n, ell, r)
            .map_err(|e| e.at_step(t))?;
        let gain = solve_triangular_right(&one.sc, &one.g).map_err(|e| e.at_step(t))?;
        let recon_offset = solve_triangular_right(&one.sc, &one.wc).map_err(|e| e.at_step(t))?;
        let cons_noise = TriangularFactor::from_masked(one.sc.matrix() * one.zc.matrix(), Triangle::Lower)
            .into_matrix();
        let vu_c = one.vu.transpose() * &model.c[t];
        let obs_c = &vu_c * &one.wu;
        let obs_offset = &vu_c * &recon_offset;

        let (psi1, psi2, lam1, lam2) = match steps.last() {
            None => (None, None, None, None),
            Some(prev) => {
                let projection = one.wu.transpose() - &one.g * one.wc.transpose();
                let phi_wu = &model.phi[t] * &prev.recon_w;
                let phi_off = &model.phi[t] * &prev.recon_offset;
                let sc_wc = one.sc.matrix() * one.wc.transpose();
                (
                    Some(&projection * &phi_wu),
                    Some(&projection * &phi_off),
                    Some(&sc_wc * &phi_wu),
                    Some(&sc_wc * &phi_off),
                )
            }
        };
        steps.push(ReducedStep {
            psi1,
            psi2,
            lam1,
            lam2,
            gain,
            trans_noise: one.zu.into_matrix(),
            cons_noise,
            obs_c,
            obs_offset,
            obs_noise: one.lu.into_matrix(),
            recon_w: one.wu,
            recon_offset,
            v_u: one.vu,
            v_c: one.vc,
        });
    }
    Ok(ReducedModel { n, ell, r, steps })
}

/// Splits a raw observation into constrained and unconstrained parts,
/// `(v_c^T y, v_u^T y)`. The map is orthogonal.
pub fn transform_observation<T: Real>(
    red: &ReducedModel<T>,
    t: usize,
    y: &Vector<T>,
) -> Result<(Vector<T>, Vector<T>)> {
    let step = step_at(red, t)?;
    if y.len() != red.obs_dim() {
        return Err(Error::DimensionMismatch(format!(
            "observation {t} has length {}, expected {}",
            y.len(),
            red.obs_dim()
        )));
    }
    Ok((step.v_c.tr_mul(y), step.v_u.tr_mul(y)))
}

/// Full-state law from a law over the reduced state and the realized
/// constrained observation: `x = W_u xu + W_c S_c^-1 yc`.
///
/// The result has `n` rows and at most `n - ell` factor columns.
pub fn reconstruct_state<T: Real>(
    red: &ReducedModel<T>,
    t: usize,
    xu: &CholGaussian<T>,
    y_c: &Vector<T>,
) -> Result<CholGaussian<T>> {
    let step = step_at(red, t)?;
    if xu.dim() != red.reduced_dim() || y_c.len() != red.ell {
        return Err(Error::DimensionMismatch(format!(
            "reconstruction at t={t} got a reduced state of dimension {} and {} constrained values",
            xu.dim(),
            y_c.len()
        )));
    }
    let mean = &step.recon_w * xu.mean() + &step.recon_offset * y_c;
    CholGaussian::from_any_factor(mean, &(&step.recon_w * xu.cov_factor()))
}

fn step_at<T: Real>(red: &ReducedModel<T>, t: usize) -> Result<&ReducedStep<T>> {
    red.steps.get(t).ok_or_else(|| {
        Error::DimensionMismatch(format!("time step {t} is out of range 0..={}", red.num_steps()))
    })
}
