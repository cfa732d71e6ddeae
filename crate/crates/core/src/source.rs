//! The entangled-pair source: an ideal singlet plus a configurable noise family.
//!
//! Noise is Werner mixing followed by phase damping on Bob's qubit. Detector
//! efficiencies ride along in [`NoiseModel`] but are a readout effect and are
//! consumed by the protocol's sampling, not here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{CMatrix, DensityMatrix, C64};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Singlet weight of the Werner mixture.
    pub werner_p: f64,
    /// Phase-damping strength on Bob's qubit.
    pub dephasing_gamma: f64,
    /// Detection efficiency of Bob's outcome-0 detector.
    pub detector_eta0: f64,
    /// Detection efficiency of Bob's outcome-1 detector.
    pub detector_eta1: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::ideal()
    }
}

impl NoiseModel {
    pub const fn ideal() -> Self {
        Self { werner_p: 1.0, dephasing_gamma: 0.0, detector_eta0: 1.0, detector_eta1: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name}={v} outside [0,1]")))
            }
        };
        let efficiency = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name}={v} outside (0,1]")))
            }
        };
        unit("werner_p", self.werner_p)?;
        unit("dephasing_gamma", self.dephasing_gamma)?;
        efficiency("detector_eta0", self.detector_eta0)?;
        efficiency("detector_eta1", self.detector_eta1)
    }

    pub fn detector(&self) -> (f64, f64) {
        (self.detector_eta0, self.detector_eta1)
    }

    pub fn is_ideal(&self) -> bool {
        *self == Self::ideal()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub noise: NoiseModel,
    pub seed: u64,
}

impl SourceConfig {
    pub fn ideal(seed: u64) -> Self {
        Self { noise: NoiseModel::ideal(), seed }
    }

    /// The shared pair state every round is drawn from.
    pub fn shared_state(&self) -> Result<DensityMatrix> {
        apply_noise(&ideal_singlet(), &self.noise)
    }
}

/// |ψ⁻⟩⟨ψ⁻| with |ψ⁻⟩ = (|HV⟩ − |VH⟩)/√2.
pub fn ideal_singlet() -> DensityMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let amps = [C64::new(0.0, 0.0), C64::new(s, 0.0), C64::new(-s, 0.0), C64::new(0.0, 0.0)];
    DensityMatrix::from_pair_ket(amps).expect("singlet is normalized")
}

/// p·|ψ⁻⟩⟨ψ⁻| + (1−p)·I/4.
pub fn werner(p: f64) -> Result<DensityMatrix> {
    DensityMatrix::mix(p, &ideal_singlet(), &DensityMatrix::maximally_mixed(4)?)
}

/// Werner mixing with `werner_p`, then phase damping of strength γ on Bob.
pub fn apply_noise(rho: &DensityMatrix, noise: &NoiseModel) -> Result<DensityMatrix> {
    noise.validate()?;
    if rho.dim() != 4 {
        return Err(Error::Dimension { expected: "4x4", found: (rho.dim(), rho.dim()) });
    }
    let p = noise.werner_p;
    let mixed = rho.matrix() * C64::new(p, 0.0)
        + CMatrix::identity(4, 4) * C64::new((1.0 - p) / 4.0, 0.0);

    // Kraus operators I⊗diag(1, √(1−γ)) and I⊗diag(0, √γ).
    let g = noise.dephasing_gamma;
    let k0 = CMatrix::identity(2, 2).kronecker(&CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
        C64::new(1.0, 0.0),
        C64::new((1.0 - g).sqrt(), 0.0),
    ])));
    let k1 = CMatrix::identity(2, 2).kronecker(&CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
        C64::new(0.0, 0.0),
        C64::new(g.sqrt(), 0.0),
    ])));
    let out = &k0 * &mixed * k0.adjoint() + &k1 * &mixed * k1.adjoint();
    DensityMatrix::new(out)
}
