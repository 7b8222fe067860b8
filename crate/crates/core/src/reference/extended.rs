//! Extended-precision references, carried in 256-bit binary floating
//! point.
//!
//! Model parameters and data are converted from `f64` exactly, so results
//! are the exact answers for the model as the double-precision methods see
//! it, up to roughly 70 decimal digits minus the conditioning loss.
//! [`initial_state_reference`] runs a covariance-form Kalman filter over the
//! augmented state `(x_0, x_t)`; [`batch_reference`] conditions the dense
//! joint law directly and is meant for small models.

use dashu_float::round::mode::HalfEven;
use dashu_float::FBig;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::reduction::StateSpaceModel;
use crate::reference::dense::StateMoments;

/// Working precision in bits.
pub const PRECISION_BITS: usize = 256;

type F = FBig<HalfEven, 2>;

fn ext(x: f64) -> Result<F> {
    F::try_from(x)
        .map(|v| v.with_precision(PRECISION_BITS).value())
        .map_err(|_| Error::DimensionMismatch(format!("non-finite value {x} in extended-precision input")))
}

fn to_f64(x: &F) -> f64 {
    x.to_f64().value()
}

/// Dense row-major matrix over `F`.
#[derive(Clone)]
struct XMat {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl XMat {
    fn zeros(rows: usize, cols: usize) -> Self {
        let zero = ext(0.0).expect("finite");
        Self { rows, cols, data: vec![zero; rows * cols] }
    }

    fn from_f64(m: &Matrix<f64>) -> Result<Self> {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                *out.at_mut(i, j) = ext(m[(i, j)])?;
            }
        }
        Ok(out)
    }

    fn to_f64(&self) -> Matrix<f64> {
        Matrix::from_fn(self.rows, self.cols, |i, j| to_f64(self.at(i, j)))
    }

    fn at(&self, i: usize, j: usize) -> &F {
        &self.data[i * self.cols + j]
    }

    fn at_mut(&mut self, i: usize, j: usize) -> &mut F {
        &mut self.data[i * self.cols + j]
    }

    fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                *out.at_mut(j, i) = self.at(i, j).clone();
            }
        }
        out
    }

    fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a.repr().is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let prod = a * other.at(k, j);
                    let slot = out.at_mut(i, j);
                    *slot = &*slot + &prod;
                }
            }
        }
        out
    }

    fn add(&self, other: &Self) -> Self {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    fn sub(&self, other: &Self) -> Self {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        let mut out = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                *out.at_mut(i, j) = self.at(r0 + i, c0 + j).clone();
            }
        }
        out
    }

    fn set_block(&mut self, r0: usize, c0: usize, b: &Self) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                *self.at_mut(r0 + i, c0 + j) = b.at(i, j).clone();
            }
        }
    }

    /// Solves `self x = rhs` by Gaussian elimination with partial pivoting.
    fn solve(&self, rhs: &Self) -> Result<Self> {
        let n = self.rows;
        let mut a = self.clone();
        let mut b = rhs.clone();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| to_f64(a.at(i, col)).abs().total_cmp(&to_f64(a.at(j, col)).abs()))
                .expect("nonempty range");
            if a.at(pivot, col).repr().is_zero() {
                return Err(Error::SingularTriangular { index: col, step: None });
            }
            if pivot != col {
                for j in 0..n {
                    a.data.swap(pivot * n + j, col * n + j);
                }
                for j in 0..b.cols {
                    b.data.swap(pivot * b.cols + j, col * b.cols + j);
                }
            }
            let inv = &ext(1.0).expect("finite") / a.at(col, col);
            for i in col + 1..n {
                let factor = a.at(i, col) * &inv;
                for j in col..n {
                    let v = a.at(i, j) - &(&factor * a.at(col, j));
                    *a.at_mut(i, j) = v;
                }
                for j in 0..b.cols {
                    let v = b.at(i, j) - &(&factor * b.at(col, j));
                    *b.at_mut(i, j) = v;
                }
            }
        }
        for col in (0..n).rev() {
            for j in 0..b.cols {
                let mut v = b.at(col, j).clone();
                for k in col + 1..n {
                    v = &v - &(a.at(col, k) * b.at(k, j));
                }
                *b.at_mut(col, j) = &v / a.at(col, col);
            }
        }
        Ok(b)
    }
}

/// Moments of `x_0` given every observation, computed in 256-bit
/// arithmetic.
pub fn initial_state_reference(model: &StateSpaceModel<f64>, obs: &[Vector<f64>]) -> Result<StateMoments> {
    model.validate()?;
    if obs.len() != model.num_steps() + 1 {
        return Err(Error::DimensionMismatch(format!(
            "{} observations for a model with {} time steps",
            obs.len(),
            model.num_steps() + 1
        )));
    }
    let n = model.n;
    let m = model.obs_dim();
    // augmented state (x_0, x_t)
    let mut mean = XMat::zeros(2 * n, 1);
    let mut cov = XMat::zeros(2 * n, 2 * n);
    for (t, y) in obs.iter().enumerate() {
        let q = XMat::from_f64(&model.q[t])?;
        let qq = q.mul(&q.transpose());
        if t == 0 {
            for (r0, c0) in [(0, 0), (0, n), (n, 0), (n, n)] {
                cov.set_block(r0, c0, &qq);
            }
        } else {
            let phi = XMat::from_f64(&model.phi[t])?;
            let phi_t = phi.transpose();
            let cross = cov.block(0, n, n, n).mul(&phi_t);
            let own = phi.mul(&cov.block(n, n, n, n)).mul(&phi_t).add(&qq);
            cov.set_block(0, n, &cross);
            cov.set_block(n, 0, &cross.transpose());
            cov.set_block(n, n, &own);
            mean.set_block(n, 0, &phi.mul(&mean.block(n, 0, n, 1)));
        }

        let c = XMat::from_f64(&model.c[t])?;
        let f = XMat::from_f64(&model.f[t])?;
        // G = H P with H = [0 C]
        let g = c.mul(&cov.block(n, 0, n, 2 * n));
        let s = g.block(0, n, m, n).mul(&c.transpose()).add(&f.mul(&f.transpose()));
        let yx = XMat::from_f64(&Matrix::from_column_slice(m, 1, y.as_slice()))?;
        let innovation = yx.sub(&c.mul(&mean.block(n, 0, n, 1)));
        let mut rhs = XMat::zeros(m, 2 * n + 1);
        rhs.set_block(0, 0, &g);
        rhs.set_block(0, 2 * n, &innovation);
        let sol = s.solve(&rhs).map_err(|e| e.at_step(t))?;
        let gt = g.transpose();
        mean = mean.add(&gt.mul(&sol.block(0, 2 * n, m, 1)));
        cov = cov.sub(&gt.mul(&sol.block(0, 0, m, 2 * n)));
    }
    let cov0 = cov.block(0, 0, n, n).to_f64();
    Ok(StateMoments {
        mean: mean.block(0, 0, n, 1).to_f64().column(0).into_owned(),
        cov: (&cov0 + cov0.transpose()) * 0.5,
    })
}

/// Filtering and smoothing moments of every state from exact batch
/// conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPosterior {
    /// `p(x_t | y_{0:t})`.
    pub filtered: Vec<StateMoments>,
    /// `p(x_t | y_{0:T})`.
    pub smoothed: Vec<StateMoments>,
}

/// Conditions the joint law of `(x_{0:T}, y_{0:T})` on the observations in
/// 256-bit arithmetic. The observation marginal is inverted exactly (it is
/// nonsingular for a valid model), so no eigenvalue threshold is involved.
pub fn batch_reference(model: &StateSpaceModel<f64>, obs: &[Vector<f64>]) -> Result<ExactPosterior> {
    model.validate()?;
    let (n, m, r) = (model.n, model.obs_dim(), model.r);
    let k = model.num_steps() + 1;
    if obs.len() != k {
        return Err(Error::DimensionMismatch(format!("{} observations for a model with {k} time steps", obs.len())));
    }
    // rows: x_0..x_T then y_0..y_T; columns: u_0..u_T then w_0..w_T
    let width = k * (n + r);
    let mut map = XMat::zeros(k * (n + m), width);
    let mut state = XMat::zeros(n, width);
    for t in 0..k {
        let q = XMat::from_f64(&model.q[t])?;
        state = if t == 0 { state } else { XMat::from_f64(&model.phi[t])?.mul(&state) };
        state.set_block(0, t * n, &q);
        let mut y = XMat::from_f64(&model.c[t])?.mul(&state);
        y.set_block(0, k * n + t * r, &XMat::from_f64(&model.f[t])?);
        map.set_block(t * n, 0, &state);
        map.set_block(k * n + t * m, 0, &y);
    }
    let cov = map.mul(&map.transpose());
    let ys = XMat::from_f64(&Matrix::from_iterator(k * m, 1, obs.iter().flat_map(|y| y.iter().copied())))?;
    // the joint mean is zero
    let condition = |t: usize, upto: usize| -> Result<StateMoments> {
        let len = upto * m;
        let syy = cov.block(k * n, k * n, len, len);
        let syx = cov.block(k * n, t * n, len, n);
        let mut rhs = XMat::zeros(len, n + 1);
        rhs.set_block(0, 0, &syx);
        rhs.set_block(0, n, &ys.block(0, 0, len, 1));
        let sol = syy.solve(&rhs)?;
        let sxy = syx.transpose();
        let mean = sxy.mul(&sol.block(0, n, len, 1)).to_f64().column(0).into_owned();
        let c = cov.block(t * n, t * n, n, n).sub(&sxy.mul(&sol.block(0, 0, len, n))).to_f64();
        Ok(StateMoments { mean, cov: (&c + c.transpose()) * 0.5 })
    };
    let filtered = (0..k).map(|t| condition(t, t + 1)).collect::<Result<_>>()?;
    let smoothed = (0..k).map(|t| condition(t, k)).collect::<Result<_>>()?;
    Ok(ExactPosterior { filtered, smoothed })
}
