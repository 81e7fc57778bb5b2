use serde::{Deserialize, Serialize};

use crate::numerics::Vector;

/// Element-wise nonlinearity. Its back propagation is never sparsified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

#[inline]
pub fn sigmoid(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, y: f64) -> f64 {
        match self {
            Activation::Relu => y.max(0.0),
            Activation::Tanh => y.tanh(),
            Activation::Sigmoid => sigmoid(y),
            Activation::Identity => y,
        }
    }

    /// dz/dy given the pre-activation `y` and output `z`.
    #[inline]
    pub fn derivative(self, y: f64, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z * z,
            Activation::Sigmoid => z * (1.0 - z),
            Activation::Identity => 1.0,
        }
    }

    pub fn forward(self, y: &[f64]) -> Vector {
        y.iter().map(|&v| self.apply(v)).collect::<Vec<_>>().into()
    }

    pub fn backward(self, y: &[f64], z: &[f64], grad_z: &[f64]) -> Vector {
        y.iter()
            .zip(z)
            .zip(grad_z)
            .map(|((&y, &z), &g)| g * self.derivative(y, z))
            .collect::<Vec<_>>()
            .into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward() {
        assert_eq!(&*Activation::Relu.forward(&[-1.0, 0.0, 2.0]), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn tanh_backward_at_zero() {
        let z = Activation::Tanh.forward(&[0.0]);
        assert_eq!(Activation::Tanh.backward(&[0.0], &z, &[1.0])[0], 1.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for act in [Activation::Sigmoid, Activation::Tanh, Activation::Identity, Activation::Relu] {
            for &y in &[-2.3, -0.4, 0.3, 1.7] {
                let z = act.apply(y);
                let numeric = (act.apply(y + h) - act.apply(y - h)) / (2.0 * h);
                let analytic = act.derivative(y, z);
                assert!((numeric - analytic).abs() < 1e-7, "{act:?} at {y}");
            }
        }
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
    }
}
