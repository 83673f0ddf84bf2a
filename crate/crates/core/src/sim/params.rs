use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::EdgeNonlinearity;

/// Mean and standard deviation of a normally distributed parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

impl Gaussian {
    pub const fn new(mean: f64, std: f64) -> Self {
        Gaussian { mean, std }
    }

    /// One draw; non-positive draws are redrawn, so strictly positive means stay
    /// strictly positive.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.std == 0.0 {
            return self.mean;
        }
        let normal = Normal::new(self.mean, self.std).expect("finite std");
        loop {
            let x = normal.sample(rng);
            if x > 0.0 || self.mean <= 0.0 {
                return x;
            }
        }
    }

    fn deterministic(self) -> Self {
        Gaussian { std: 0.0, ..self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum NonlinearDistribution {
    Cubic {
        kappa: Gaussian,
    },
    Clearance {
        rotational_stiffness: Gaussian,
        /// Clearance angle in radians.
        clearance: Gaussian,
    },
}

/// Parameter distributions for the true structure; the means are also the
/// nominal values known to the model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterDistributions {
    pub stiffness: Gaussian,
    pub damping: Gaussian,
    pub nonlinear: NonlinearDistribution,
}

impl ParameterDistributions {
    /// Random array with cubic hardening: k 200 N/m, c 0.1 N s/m, kappa 1000 N/m^3,
    /// each with a 5% standard deviation.
    pub fn sobol_array() -> Self {
        ParameterDistributions {
            stiffness: Gaussian::new(200.0, 10.0),
            damping: Gaussian::new(0.1, 5e-3),
            nonlinear: NonlinearDistribution::Cubic {
                kappa: Gaussian::new(1000.0, 50.0),
            },
        }
    }

    /// Bridge truss with angular clearance: k 2000 N/m, c 0.1 N s/m,
    /// k_r 100 N/rad, clearance 1 degree, each with a 5% standard deviation.
    pub fn bridge_truss() -> Self {
        ParameterDistributions {
            stiffness: Gaussian::new(2000.0, 100.0),
            damping: Gaussian::new(0.1, 0.005),
            nonlinear: NonlinearDistribution::Clearance {
                rotational_stiffness: Gaussian::new(100.0, 5.0),
                clearance: Gaussian::new(1f64.to_radians(), 0.05f64.to_radians()),
            },
        }
    }

    /// Same means, zero spread.
    pub fn means_only(&self) -> Self {
        ParameterDistributions {
            stiffness: self.stiffness.deterministic(),
            damping: self.damping.deterministic(),
            nonlinear: match self.nonlinear {
                NonlinearDistribution::Cubic { kappa } => NonlinearDistribution::Cubic {
                    kappa: kappa.deterministic(),
                },
                NonlinearDistribution::Clearance {
                    rotational_stiffness,
                    clearance,
                } => NonlinearDistribution::Clearance {
                    rotational_stiffness: rotational_stiffness.deterministic(),
                    clearance: clearance.deterministic(),
                },
            },
        }
    }

    /// Draws `(k, c, nonlinearity)` for one edge.
    pub fn sample_edge<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64, EdgeNonlinearity) {
        let k = self.stiffness.sample(rng);
        let c = self.damping.sample(rng);
        let nl = match self.nonlinear {
            NonlinearDistribution::Cubic { kappa } => EdgeNonlinearity::Cubic {
                kappa: kappa.sample(rng),
            },
            NonlinearDistribution::Clearance {
                rotational_stiffness,
                clearance,
            } => EdgeNonlinearity::Clearance {
                rotational_stiffness: rotational_stiffness.sample(rng),
                clearance: clearance.sample(rng),
            },
        };
        (k, c, nl)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn table_means() {
        let b = ParameterDistributions::bridge_truss();
        match b.nonlinear {
            NonlinearDistribution::Clearance { clearance, .. } => {
                assert!((clearance.mean - 0.017453292519943295).abs() < 1e-15);
            }
            _ => unreachable!(),
        }
        assert_eq!(ParameterDistributions::sobol_array().stiffness.mean, 200.0);
    }

    #[test]
    fn five_percent_spread() {
        for d in [ParameterDistributions::sobol_array(), ParameterDistributions::bridge_truss()] {
            assert!((d.stiffness.std / d.stiffness.mean - 0.05).abs() < 1e-12);
            assert!((d.damping.std / d.damping.mean - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_statistics() {
        let d = ParameterDistributions::sobol_array();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<f64> = (0..20000).map(|_| d.sample_edge(&mut rng).0).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((mean - 200.0).abs() < 0.5);
        assert!((var.sqrt() - 10.0).abs() < 0.3);
    }
}
