//! Two-qubit state tomography over the 6x6 grid of Pauli eigenstate projectors.
//!
//! Counts are simulated per setting as Binomial(shots, Tr[ρ (P_A ⊗ P_B)]).
//! Reconstruction is linear inversion followed by a Frobenius-nearest
//! projection onto the physical (PSD, unit-trace) set.
//!
//! Every projector is (I + s·σ_axis)/2 with sign s = ±1, so the setting
//! probabilities are
//!
//! ```text
//! p(a, b) = ¼ (1 + s_a r_A + s_b r_B + s_a s_b T)
//! ```
//!
//! and the sign patterns over each 2x2 block of settings are orthogonal.
//! The least-squares inversion of the 36-setting design therefore reduces to
//! signed sums over blocks, averaged where a coefficient appears in several
//! blocks.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{self, fidelity, hermitian_eigen, projector, tensor, CMatrix, DensityMatrix, Operator, PureState, C64};
use crate::rng::{stream_rng, TOMOGRAPHY_STREAM};
use crate::source::ideal_singlet;

pub const PROJECTORS: [ProjectorLabel; 6] = [
    ProjectorLabel::H,
    ProjectorLabel::V,
    ProjectorLabel::D,
    ProjectorLabel::J,
    ProjectorLabel::R,
    ProjectorLabel::L,
];

pub const SETTING_COUNT: usize = 36;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProjectorLabel {
    H,
    V,
    D,
    J,
    R,
    L,
}

impl ProjectorLabel {
    pub fn state(self) -> PureState {
        match self {
            ProjectorLabel::H => PureState::h(),
            ProjectorLabel::V => PureState::v(),
            ProjectorLabel::D => PureState::d(),
            ProjectorLabel::J => PureState::j(),
            ProjectorLabel::R => PureState::r(),
            ProjectorLabel::L => PureState::l(),
        }
    }

    /// Pauli axis index (x=0, y=1, z=2) and eigenvalue sign.
    fn axis_sign(self) -> (usize, f64) {
        match self {
            ProjectorLabel::D => (0, 1.0),
            ProjectorLabel::J => (0, -1.0),
            ProjectorLabel::R => (1, 1.0),
            ProjectorLabel::L => (1, -1.0),
            ProjectorLabel::H => (2, 1.0),
            ProjectorLabel::V => (2, -1.0),
        }
    }

    pub fn index(self) -> usize {
        PROJECTORS.iter().position(|&p| p == self).unwrap()
    }
}

impl fmt::Display for ProjectorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ProjectorLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PROJECTORS
            .iter()
            .copied()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| Error::Tomography(format!("unknown projector label {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TomographySetting {
    pub alice_projector: ProjectorLabel,
    pub bob_projector: ProjectorLabel,
}

impl TomographySetting {
    /// All 36 settings, Alice-major in [`PROJECTORS`] order.
    pub fn all() -> impl Iterator<Item = TomographySetting> {
        PROJECTORS.iter().flat_map(|&a| {
            PROJECTORS.iter().map(move |&b| TomographySetting { alice_projector: a, bob_projector: b })
        })
    }

    pub fn index(&self) -> usize {
        self.alice_projector.index() * 6 + self.bob_projector.index()
    }

    pub fn operator(&self) -> Operator {
        let a = projector(&self.alice_projector.state()).expect("named states are normalized");
        let b = projector(&self.bob_projector.state()).expect("named states are normalized");
        tensor(&a, &b).expect("qubit projectors")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TomographyCounts {
    pub shots_per_setting: u32,
    /// Coincidence counts indexed by [`TomographySetting::index`].
    pub counts: Vec<u32>,
}

impl TomographyCounts {
    pub fn validate(&self) -> Result<()> {
        if self.shots_per_setting == 0 {
            return Err(Error::Tomography("zero shots per setting".into()));
        }
        if self.counts.len() != SETTING_COUNT {
            return Err(Error::Tomography(format!("expected 36 settings, found {}", self.counts.len())));
        }
        if let Some(c) = self.counts.iter().find(|&&c| c > self.shots_per_setting) {
            return Err(Error::Tomography(format!("count {c} exceeds shots {}", self.shots_per_setting)));
        }
        Ok(())
    }

    pub fn count(&self, setting: TomographySetting) -> u32 {
        self.counts[setting.index()]
    }

    /// Counts rounded from exact probabilities, the infinite-statistics limit.
    pub fn expected(rho: &DensityMatrix, shots: u32) -> Result<Self> {
        let probs = setting_probabilities(rho)?;
        Ok(Self {
            shots_per_setting: shots,
            counts: probs.iter().map(|p| (p * shots as f64).round() as u32).collect(),
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W, header: &str) -> std::io::Result<()> {
        writeln!(w, "{header}")?;
        writeln!(w, "alice_proj,bob_proj,shots,count")?;
        for s in TomographySetting::all() {
            writeln!(w, "{},{},{},{}", s.alice_projector, s.bob_projector, self.shots_per_setting, self.count(s))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let bad = |reason: String| Error::Tomography(reason);
        let mut counts = vec![None; SETTING_COUNT];
        let mut shots = None;
        let mut seen_header = false;
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !seen_header {
                if line != "alice_proj,bob_proj,shots,count" {
                    return Err(bad(format!("unexpected header {line:?}")));
                }
                seen_header = true;
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(bad(format!("expected 4 columns in {line:?}")));
            }
            let setting = TomographySetting { alice_projector: cols[0].parse()?, bob_projector: cols[1].parse()? };
            let n: u32 = cols[2].parse().map_err(|_| bad(format!("bad shots {:?}", cols[2])))?;
            let c: u32 = cols[3].parse().map_err(|_| bad(format!("bad count {:?}", cols[3])))?;
            match shots {
                None => shots = Some(n),
                Some(s) if s != n => return Err(bad("shots differ between settings".into())),
                _ => {}
            }
            counts[setting.index()] = Some(c);
        }
        let counts: Option<Vec<u32>> = counts.into_iter().collect();
        let out = Self {
            shots_per_setting: shots.ok_or_else(|| bad("no rows".into()))?,
            counts: counts.ok_or_else(|| bad("missing settings".into()))?,
        };
        out.validate()?;
        Ok(out)
    }
}

/// Born probabilities for all 36 settings.
pub fn setting_probabilities(rho: &DensityMatrix) -> Result<Vec<f64>> {
    if rho.dim() != 4 {
        return Err(Error::Dimension { expected: "4x4", found: (rho.dim(), rho.dim()) });
    }
    TomographySetting::all()
        .map(|s| qcore::expectation(rho, &s.operator()).map(|p| p.clamp(0.0, 1.0)))
        .collect()
}

/// Binomial coincidence counts for every setting, deterministic in `seed`.
pub fn simulate_counts(rho: &DensityMatrix, shots: u32, seed: u64) -> Result<TomographyCounts> {
    if shots == 0 {
        return Err(Error::Tomography("zero shots per setting".into()));
    }
    let probs = setting_probabilities(rho)?;
    let mut rng = stream_rng(seed, TOMOGRAPHY_STREAM);
    let counts = probs
        .iter()
        .map(|&p| {
            Binomial::new(shots as u64, p)
                .map(|d| d.sample(&mut rng) as u32)
                .map_err(|e| Error::InvalidParameter(e.to_string()))
        })
        .collect::<Result<_>>()?;
    Ok(TomographyCounts { shots_per_setting: shots, counts })
}

#[derive(Clone, Debug)]
pub struct ReconstructionResult {
    pub rho_hat: DensityMatrix,
    pub fidelity_to_singlet: f64,
    /// Linear-inversion estimate before projection; Hermitian, unit trace, maybe not PSD.
    pub raw_linear_inversion: CMatrix,
}

/// Linear inversion plus projection to the nearest physical state.
pub fn reconstruct(counts: &TomographyCounts) -> Result<ReconstructionResult> {
    counts.validate()?;
    let raw = linear_inversion(counts);
    let rho_hat = project_to_physical(&raw)?;
    let fidelity_to_singlet = fidelity_to_singlet(&rho_hat)?;
    Ok(ReconstructionResult { rho_hat, fidelity_to_singlet, raw_linear_inversion: raw })
}

fn pauli(axis: usize) -> CMatrix {
    match axis {
        0 => Operator::identity(2),
        1 => Operator::sigma_x(),
        2 => Operator::sigma_y(),
        _ => Operator::sigma_z(),
    }
    .into_matrix()
}

/// ρ = ¼ Σ c_ij σ_i ⊗ σ_j with c_00 = 1 and the remaining coefficients fit by
/// least squares from per-setting frequencies.
fn linear_inversion(counts: &TomographyCounts) -> CMatrix {
    let shots = counts.shots_per_setting as f64;
    // coeff[i][j], index 0 = identity, 1..=3 = x, y, z.
    let mut coeff = [[0.0f64; 4]; 4];
    coeff[0][0] = 1.0;
    for s in TomographySetting::all() {
        let f = counts.count(s) as f64 / shots;
        let (ax_a, sa) = s.alice_projector.axis_sign();
        let (ax_b, sb) = s.bob_projector.axis_sign();
        coeff[ax_a + 1][ax_b + 1] += sa * sb * f;
        // Local terms are determined once per block and averaged over the 3 blocks.
        coeff[ax_a + 1][0] += sa * f / 3.0;
        coeff[0][ax_b + 1] += sb * f / 3.0;
    }
    let mut rho = CMatrix::zeros(4, 4);
    for (i, row) in coeff.iter().enumerate() {
        for (j, &cij) in row.iter().enumerate() {
            if cij != 0.0 {
                rho += pauli(i).kronecker(&pauli(j)) * C64::new(cij / 4.0, 0.0);
            }
        }
    }
    // Exact Hermitian symmetrization; the sum above is Hermitian up to rounding.
    (&rho + rho.adjoint()) * C64::new(0.5, 0.0)
}

/// Frobenius-nearest unit-trace PSD matrix to a Hermitian `h`.
///
/// Diagonalize, project the eigenvalues onto the probability simplex, and
/// rebuild with the same eigenvectors.
pub fn project_to_physical(h: &CMatrix) -> Result<DensityMatrix> {
    let (vals, vecs) = hermitian_eigen(h);
    let projected = project_to_simplex(&vals);
    let diag = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        projected.len(),
        projected.iter().map(|&l| C64::new(l, 0.0)),
    ));
    let m = &vecs * diag * vecs.adjoint();
    let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    DensityMatrix::new(m)
}

/// Euclidean projection onto {x : x ≥ 0, Σx = 1}.
fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// ⟨ψ⁻|ρ|ψ⁻⟩.
pub fn fidelity_to_singlet(rho: &DensityMatrix) -> Result<f64> {
    fidelity(rho, &ideal_singlet())
}
