//! Deterministic noise generation, trajectory simulation and the model
//! generators used by the experiments.
//!
//! Every draw is keyed by `(seed, t, stream)`, so the value of `u_t` does
//! not depend on how many other draws happened before it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{Matrix, Real, Vector};
use crate::reduction::StateSpaceModel;

/// Stream identifiers for [`NoiseSource`].
pub mod stream {
    pub const PROCESS: u64 = 0;
    pub const OBSERVATION: u64 = 1;
    pub const PARAMETERS: u64 = 2;
}

/// Counter-based source of standard normal draws.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSource {
    seed: u64,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Generator for the block of draws at index `t` on stream `stream`.
    pub fn rng(&self, t: u64, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(t);
        rng
    }

    pub fn standard_normal_vector(&self, t: u64, stream: u64, len: usize) -> Vector<f64> {
        let mut rng = self.rng(t, stream);
        Vector::from_fn(len, |_, _| rng.sample(StandardNormal))
    }
}

/// States `x_0..x_T` and observations `y_0..y_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    pub x: Vec<Vector<T>>,
    pub y: Vec<Vector<T>>,
}

/// Draws a trajectory from `model`. With `zero_noise` the result is the
/// deterministic recursion `x_t = Phi_t x_{t-1}`, `y_t = C_t x_t` from
/// `x_{-1} = 0`.
pub fn simulate<T: Real>(model: &StateSpaceModel<T>, seed: u64, zero_noise: bool) -> Trajectory<T> {
    let noise = NoiseSource::new(seed);
    let mut x = Vector::<T>::zeros(model.n);
    let mut xs = Vec::with_capacity(model.phi.len());
    let mut ys = Vec::with_capacity(model.phi.len());
    for t in 0..model.phi.len() {
        x = &model.phi[t] * &x;
        let mut y_noise = Vector::<T>::zeros(model.obs_dim());
        if !zero_noise {
            let u: Vector<T> = noise.standard_normal_vector(t as u64, stream::PROCESS, model.n).map(nalgebra::convert::<f64, T>);
            let w: Vector<T> = noise.standard_normal_vector(t as u64, stream::OBSERVATION, model.r).map(nalgebra::convert::<f64, T>);
            x += &model.q[t] * u;
            y_noise = &model.f[t] * w;
        }
        let y = &model.c[t] * &x + y_noise;
        xs.push(x.clone());
        ys.push(y);
    }
    Trajectory { x: xs, y: ys }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Model with standard normal parameters; `Phi_t` is scaled by
/// `1/sqrt(n)` so trajectories stay bounded over long horizons.
pub fn random_model(n: usize, ell: usize, r: usize, steps: usize, seed: u64) -> StateSpaceModel<f64> {
    let source = NoiseSource::new(seed);
    let m = ell + r;
    let phi_scale = 1.0 / (n.max(1) as f64).sqrt();
    let mut model = StateSpaceModel { n, ell, r, phi: vec![], q: vec![], c: vec![], f: vec![] };
    for t in 0..=steps {
        let mut rng = source.rng(t as u64, stream::PARAMETERS);
        model.phi.push(normal_matrix(&mut rng, n, n, phi_scale));
        model.q.push(normal_matrix(&mut rng, n, n, 1.0));
        model.c.push(normal_matrix(&mut rng, m, n, 1.0));
        model.f.push(normal_matrix(&mut rng, m, r, 1.0));
    }
    model
}

/// Hilbert matrix `H[i][j] = 1 / (i + j + 1)` with zero-based indices.
pub fn hilbert(n: usize) -> Matrix<f64> {
    Matrix::from_fn(n, n, |i, j| 1.0 / (i + j + 1) as f64)
}

/// Random walk `x_t = x_{t-1} + H_n u_t` whose first `ell` coordinates are
/// observed without noise (`C_t = [I 0]`, `r = 0`).
pub fn hilbert_model(n: usize, ell: usize, steps: usize) -> StateSpaceModel<f64> {
    let mut c = Matrix::zeros(ell, n);
    c.view_mut((0, 0), (ell, ell)).fill_with_identity();
    let k = steps + 1;
    StateSpaceModel {
        n,
        ell,
        r: 0,
        phi: vec![Matrix::identity(n, n); k],
        q: vec![hilbert(n); k],
        c: vec![c; k],
        f: vec![Matrix::zeros(ell, 0); k],
    }
}
