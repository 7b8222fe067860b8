//! Leading-order matrix-matrix operation counts per filter step.
//!
//! Constant factors are dropped: every `a x b` by `b x c` product or QR of
//! comparable size is charged as the cube of its defining dimension.

/// Operation-count model for one step of the reduced and the unreduced
/// square-root filter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopModel;

impl FlopModel {
    /// `n^3 + (n - ell) ell^2 + (n - ell)^3 + (n + r - ell)^3 + r^3`.
    pub fn reduced_cost(&self, n: usize, ell: usize, r: usize) -> f64 {
        let (n, l, r) = (n as f64, ell as f64, r as f64);
        n.powi(3) + (n - l) * l * l + (n - l).powi(3) + (n + r - l).powi(3) + r.powi(3)
    }

    /// `n^3 + (n + m)^3 + n m^2`.
    pub fn unreduced_cost(&self, n: usize, m: usize) -> f64 {
        let (n, m) = (n as f64, m as f64);
        n.powi(3) + (n + m).powi(3) + n * m * m
    }
}

/// Predicted cost of the reduced filter relative to the unreduced one, with
/// `m = ell + r` observations per step.
pub fn flop_ratio(n: usize, ell: usize, r: usize) -> f64 {
    FlopModel.reduced_cost(n, ell, r) / FlopModel.unreduced_cost(n, ell + r)
}
