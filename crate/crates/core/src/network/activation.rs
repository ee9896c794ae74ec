use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Element-wise nonlinearity shared by every layer of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub const ALL: [Activation; 4] = [Activation::Identity, Activation::Relu, Activation::Tanh, Activation::Sigmoid];

    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(T::zero()),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => T::one() / (T::one() + (-z).exp()),
        }
    }

    /// `σ'(z)`. The ReLU derivative at 0 is taken as 0.
    pub fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                T::one() - t * t
            }
            Activation::Sigmoid => {
                let s = self.apply(z);
                s * (T::one() - s)
            }
        }
    }

    /// `σ'(z)` expressed through `a = σ(z)`, so backward only needs the
    /// activations a forward pass already stores.
    #[inline]
    pub fn derivative_from_output<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - a * a,
            Activation::Sigmoid => a * (T::one() - a),
        }
    }

    /// Kaiming gain: √2 for ReLU, 1 otherwise.
    pub fn gain(self) -> f64 {
        match self {
            Activation::Relu => std::f64::consts::SQRT_2,
            _ => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown activation {s:?} (identity, relu, tanh, sigmoid)"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_matches_central_difference() {
        let h = 1e-4;
        for act in Activation::ALL {
            for i in -40..=40 {
                let z = i as f64 * 0.1 + 0.05; // keep away from the ReLU kink
                let fd = (act.apply(z + h) - act.apply(z - h)) / (2.0 * h);
                let an = act.derivative(z);
                let rel = (fd - an).abs() / an.abs().max(1e-12);
                assert!(rel < 1e-6 || (fd - an).abs() < 1e-12, "{act:?} at {z}: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn derivative_from_output_agrees() {
        for act in Activation::ALL {
            for i in -30..=30 {
                let z = i as f64 * 0.17;
                let a = act.apply(z);
                assert!((act.derivative(z) - act.derivative_from_output(a)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("ReLU".parse::<Activation>(), Ok(Activation::Relu));
        assert!("gelu".parse::<Activation>().is_err());
    }
}
