//! Target distributions `π(x) ∝ exp(-U(x))`, possibly factorised over data.

mod gaussian;
mod logistic;

pub use gaussian::GaussianTarget;
pub use logistic::{
    generate_logistic_data, log_sigmoid, logistic_lipschitz_l, sigmoid, LogisticData,
    LogisticModel, LogisticSidecar,
};

/// A potential `U` together with its gradient, optionally split into `N`
/// per-datum terms whose gradients sum to `∇U`.
pub trait TargetModel: Send + Sync {
    fn dim(&self) -> usize;

    /// Number of data terms; 1 for targets that do not factorise.
    fn num_data(&self) -> usize {
        1
    }

    /// `U(x)` up to an additive constant.
    fn potential(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64], out: &mut [f64]);

    /// Gradient of the `i`-th term. The sum over `i` equals [`TargetModel::gradient`].
    fn datum_gradient(&self, i: usize, x: &[f64], out: &mut [f64]) {
        assert_eq!(i, 0, "non-factorised target has a single term");
        self.gradient(x, out);
    }

    /// Uniform bound on the spectral norm of the Hessian of `U`.
    fn hessian_bound(&self) -> f64;

    /// Uniform bound on the spectral norm of every per-datum Hessian.
    fn datum_hessian_bound(&self) -> f64 {
        self.hessian_bound()
    }

    /// `U(x)` and `∇U(x)` in one pass over the data.
    fn potential_and_gradient(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.gradient(x, out);
        self.potential(x)
    }

    fn gradient_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient(x, &mut g);
        g
    }
}

impl<T: TargetModel + ?Sized> TargetModel for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn num_data(&self) -> usize {
        (**self).num_data()
    }
    fn potential(&self, x: &[f64]) -> f64 {
        (**self).potential(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (**self).gradient(x, out)
    }
    fn datum_gradient(&self, i: usize, x: &[f64], out: &mut [f64]) {
        (**self).datum_gradient(i, x, out)
    }
    fn hessian_bound(&self) -> f64 {
        (**self).hessian_bound()
    }
    fn datum_hessian_bound(&self) -> f64 {
        (**self).datum_hessian_bound()
    }
    fn potential_and_gradient(&self, x: &[f64], out: &mut [f64]) -> f64 {
        (**self).potential_and_gradient(x, out)
    }
}

impl<T: TargetModel + ?Sized> TargetModel for std::sync::Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn num_data(&self) -> usize {
        (**self).num_data()
    }
    fn potential(&self, x: &[f64]) -> f64 {
        (**self).potential(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (**self).gradient(x, out)
    }
    fn datum_gradient(&self, i: usize, x: &[f64], out: &mut [f64]) {
        (**self).datum_gradient(i, x, out)
    }
    fn hessian_bound(&self) -> f64 {
        (**self).hessian_bound()
    }
    fn datum_hessian_bound(&self) -> f64 {
        (**self).datum_hessian_bound()
    }
    fn potential_and_gradient(&self, x: &[f64], out: &mut [f64]) -> f64 {
        (**self).potential_and_gradient(x, out)
    }
}

/// Central finite-difference gradient, used as a test oracle.
pub fn finite_difference_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
