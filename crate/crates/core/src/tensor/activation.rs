use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use super::LEAKY_RELU_SLOPE;

/// Elementwise nonlinearities. The first five are the configurable choices;
/// `Tanh` is the fixed candidate/memory nonlinearity of the LSTM update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Sigmoid,
    Relu,
    LeakyRelu,
    Linear,
    HardSigmoid,
    Tanh,
}

impl ActivationKind {
    /// The five choices offered to the architecture search.
    pub const CONFIGURABLE: [ActivationKind; 5] = [
        ActivationKind::Sigmoid,
        ActivationKind::Relu,
        ActivationKind::LeakyRelu,
        ActivationKind::Linear,
        ActivationKind::HardSigmoid,
    ];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => stable_sigmoid(x),
            ActivationKind::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_RELU_SLOPE * x
                }
            }
            ActivationKind::Linear => x,
            ActivationKind::HardSigmoid => (0.2 * x + 0.5).clamp(0.0, 1.0),
            ActivationKind::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => y * (1.0 - y),
            ActivationKind::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu => {
                if y > 0.0 {
                    1.0
                } else {
                    LEAKY_RELU_SLOPE
                }
            }
            ActivationKind::Linear => 1.0,
            ActivationKind::HardSigmoid => {
                if y > 0.0 && y < 1.0 {
                    0.2
                } else {
                    0.0
                }
            }
            ActivationKind::Tanh => 1.0 - y * y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu => "leaky_relu",
            ActivationKind::Linear => "linear",
            ActivationKind::HardSigmoid => "hard_sigmoid",
            ActivationKind::Tanh => "tanh",
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "relu" => Ok(ActivationKind::Relu),
            "leaky_relu" => Ok(ActivationKind::LeakyRelu),
            "linear" => Ok(ActivationKind::Linear),
            "hard_sigmoid" => Ok(ActivationKind::HardSigmoid),
            "tanh" => Ok(ActivationKind::Tanh),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(ActivationKind::Sigmoid.apply(0.0), 0.5);
    }

    #[test]
    fn hard_sigmoid_saturates() {
        assert_eq!(ActivationKind::HardSigmoid.apply(-3.0), 0.0);
        assert_eq!(ActivationKind::HardSigmoid.apply(3.0), 1.0);
        assert_eq!(ActivationKind::HardSigmoid.apply(0.0), 0.5);
    }

    #[test]
    fn leaky_relu_negative_slope() {
        assert_eq!(ActivationKind::LeakyRelu.apply(-2.0), -0.02);
        assert_eq!(ActivationKind::LeakyRelu.apply(2.0), 2.0);
    }

    #[test]
    fn names_round_trip() {
        for k in [
            ActivationKind::Sigmoid,
            ActivationKind::Relu,
            ActivationKind::LeakyRelu,
            ActivationKind::Linear,
            ActivationKind::HardSigmoid,
            ActivationKind::Tanh,
        ] {
            assert_eq!(k.name().parse::<ActivationKind>().unwrap(), k);
        }
    }
}
