//! Built-in damped delay wave scenario on `(0, 1)` with Dirichlet conditions:
//! `u_tt + 2αu_t = u_ξξ + c₁u_ξ(t−1) + c₂u_t(t−1) + βu(t−1)/(1+|u|)·ẇ`.

use nalgebra::DVector;

use crate::delay::{DelayKernel, HistorySegment};
use crate::operator::{build_reduction, BlockOperator, DampingSpec, SpectralOperator};
use crate::sim::{DiffusionSpec, InitialData, NoiseSpec};
use crate::stationarity::{example_thresholds, DecayConstants, DecaySource, ExampleThresholds};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WaveScenario {
    pub alpha: f64,
    pub c1: f64,
    pub c2: f64,
    pub beta: f64,
    pub n_modes: usize,
}

impl Default for WaveScenario {
    /// `α = 1`, `c₁ = 0.04`, `c₂ = 0`, `β = 0.1`, 16 modes.
    fn default() -> Self {
        WaveScenario {
            alpha: 1.0,
            c1: 0.04,
            c2: 0.0,
            beta: 0.1,
            n_modes: 16,
        }
    }
}

impl WaveScenario {
    pub const DELAY: f64 = 1.0;

    pub fn operator(&self) -> SpectralOperator {
        SpectralOperator::dirichlet_laplacian(self.n_modes)
    }

    /// `B = −2αI`.
    pub fn damping(&self) -> DampingSpec {
        DampingSpec::Scalar(-2.0 * self.alpha)
    }

    pub fn reduction(&self) -> Result<BlockOperator> {
        build_reduction(&self.operator(), &self.damping())
    }

    pub fn kernel(&self) -> Result<DelayKernel> {
        DelayKernel::wave_point_delay(&self.operator(), self.c1, self.c2)
    }

    pub fn diffusion(&self) -> Result<DiffusionSpec> {
        DiffusionSpec::wave_example(&self.operator(), self.beta)
    }

    /// Standard scalar Brownian motion.
    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec::wiener(vec![1.0]).expect("unit variance is valid")
    }

    pub fn thresholds(&self) -> Result<ExampleThresholds> {
        example_thresholds(self.alpha, self.c1, self.c2)
    }

    /// `M = 1` with the example's `γ`.
    pub fn decay_constants(&self) -> Result<DecayConstants> {
        let t = self.thresholds()?;
        let gamma = t
            .gamma
            .ok_or_else(|| Error::Precondition(t.reason.clone().unwrap_or_default()))?;
        Ok(DecayConstants::new(1.0, gamma, DecaySource::ExampleLiteral))
    }

    /// Displacement with sine coefficients `coeffs` held constant on
    /// `[−1, 0]`, zero velocity.
    pub fn initial_data(&self, coeffs: &[f64]) -> Result<InitialData> {
        if coeffs.len() > self.n_modes {
            return Err(Error::DimensionMismatch {
                context: "initial coefficients vs modes",
                expected: self.n_modes,
                found: coeffs.len(),
            });
        }
        let sqrt = self.operator().sqrt_eigenvalues();
        let mut y = DVector::zeros(2 * self.n_modes);
        for (i, c) in coeffs.iter().enumerate() {
            y[i] = sqrt[i] * c;
        }
        let history = HistorySegment::new(Self::DELAY, vec![y.clone(), y.clone()])?;
        InitialData::new(y, history)
    }
}
