//! Elementwise activation functions and their analytic derivatives.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Activation applied after each linear generative map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Logistic,
    Rectifier,
}

impl Activation {
    pub fn apply_scalar<F: Scalar>(self, z: F) -> F {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Logistic => F::one() / (F::one() + (-z).exp()),
            Activation::Rectifier => {
                if z > F::zero() {
                    z
                } else {
                    F::zero()
                }
            }
        }
    }

    /// Analytic derivative; the rectifier kink at 0 is defined as 0.
    pub fn derivative_scalar<F: Scalar>(self, z: F) -> F {
        match self {
            Activation::Identity => F::one(),
            Activation::Tanh => {
                let t = z.tanh();
                F::one() - t * t
            }
            Activation::Logistic => {
                let s = F::one() / (F::one() + (-z).exp());
                s * (F::one() - s)
            }
            Activation::Rectifier => {
                if z > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
        }
    }

    pub fn apply<F: Scalar>(self, z: &Array2<F>) -> Array2<F> {
        z.mapv(|v| self.apply_scalar(v))
    }

    pub fn derivative<F: Scalar>(self, z: &Array2<F>) -> Array2<F> {
        z.mapv(|v| self.derivative_scalar(v))
    }

    pub fn apply1<F: Scalar>(self, z: &Array1<F>) -> Array1<F> {
        z.mapv(|v| self.apply_scalar(v))
    }

    pub fn derivative1<F: Scalar>(self, z: &Array1<F>) -> Array1<F> {
        z.mapv(|v| self.derivative_scalar(v))
    }

    pub const ALL: [Activation; 4] = [
        Activation::Identity,
        Activation::Tanh,
        Activation::Logistic,
        Activation::Rectifier,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Logistic => "logistic",
            Activation::Rectifier => "rectifier",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "identity" => Some(Activation::Identity),
            "tanh" => Some(Activation::Tanh),
            "logistic" => Some(Activation::Logistic),
            "rectifier" | "relu" => Some(Activation::Rectifier),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite difference of the activation itself.
    fn fd_derivative(act: Activation, z: f64) -> f64 {
        let h = 1e-6;
        (act.apply_scalar(z + h) - act.apply_scalar(z - h)) / (2.0 * h)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for act in Activation::ALL {
            for i in 0..41 {
                let z = -2.0 + 0.1 * i as f64;
                // Skip the rectifier kink; its derivative there is 0 by definition.
                if act == Activation::Rectifier && z.abs() < 1e-3 {
                    continue;
                }
                let analytic = act.derivative_scalar(z);
                let numeric = fd_derivative(act, z);
                assert!(
                    (analytic - numeric).abs() < 1e-8,
                    "{act:?} at z={z}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn rectifier_kink_is_zero() {
        assert_eq!(Activation::Rectifier.derivative_scalar(0.0f64), 0.0);
        assert_eq!(Activation::Rectifier.apply_scalar(0.0f64), 0.0);
    }

    #[test]
    fn apply_preserves_shape() {
        let z = ndarray::Array2::<f64>::zeros((3, 5));
        for act in Activation::ALL {
            assert_eq!(act.apply(&z).dim(), (3, 5));
            assert_eq!(act.derivative(&z).dim(), (3, 5));
        }
    }

    #[test]
    fn tag_roundtrip() {
        for act in Activation::ALL {
            assert_eq!(Activation::from_tag(act.tag()), Some(act));
        }
    }
}
