//! Dense complex linear algebra for one- and two-qubit states.
//!
//! Everything here is sized for the problem at hand: single-qubit operators
//! are 2x2 and pair operators are 4x4. Two-qubit objects are always ordered
//! Alice ⊗ Bob, so basis index `2*a + b` refers to Alice's qubit in state `a`
//! and Bob's in state `b`, with |0⟩ = |H⟩ and |1⟩ = |V⟩.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Hermiticity tolerance for stored states.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Trace tolerance for stored states.
pub const TRACE_TOL: f64 = 1e-10;
/// Most negative eigenvalue a density matrix may carry.
pub const PSD_TOL: f64 = -1e-9;
/// Normalization tolerance for pure states.
pub const NORM_TOL: f64 = 1e-12;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[inline]
fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// A normalized single-qubit ket in the {|H⟩, |V⟩} basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PureState {
    amps: [C64; 2],
}

impl PureState {
    pub fn new(h: C64, v: C64) -> Result<Self> {
        let norm = h.norm_sqr() + v.norm_sqr();
        if !(h.is_finite() && v.is_finite()) || (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Self { amps: [h, v] })
    }

    pub fn h() -> Self {
        Self { amps: [c(1.0, 0.0), c(0.0, 0.0)] }
    }

    pub fn v() -> Self {
        Self { amps: [c(0.0, 0.0), c(1.0, 0.0)] }
    }

    /// (|H⟩ + i|V⟩)/√2, the +1 eigenstate of σ_y.
    pub fn r() -> Self {
        Self { amps: [c(FRAC_1_SQRT_2, 0.0), c(0.0, FRAC_1_SQRT_2)] }
    }

    /// (|H⟩ − i|V⟩)/√2, the −1 eigenstate of σ_y.
    pub fn l() -> Self {
        Self { amps: [c(FRAC_1_SQRT_2, 0.0), c(0.0, -FRAC_1_SQRT_2)] }
    }

    /// (|H⟩ + |V⟩)/√2, the +1 eigenstate of σ_x.
    pub fn d() -> Self {
        Self { amps: [c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0)] }
    }

    /// (|H⟩ − |V⟩)/√2, the −1 eigenstate of σ_x.
    pub fn j() -> Self {
        Self { amps: [c(FRAC_1_SQRT_2, 0.0), c(-FRAC_1_SQRT_2, 0.0)] }
    }

    pub fn amplitudes(&self) -> [C64; 2] {
        self.amps
    }

    pub fn inner(&self, other: &PureState) -> C64 {
        self.amps[0].conj() * other.amps[0] + self.amps[1].conj() * other.amps[1]
    }
}

/// A 2x2 or 4x4 complex operator.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    m: CMatrix,
}

/// Single-qubit operators share the representation; the alias documents intent.
pub type QubitOperator = Operator;

impl Operator {
    pub fn from_matrix(m: CMatrix) -> Result<Self> {
        check_square_dim(&m)?;
        if m.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { m })
    }

    pub fn identity(dim: usize) -> Self {
        Self { m: CMatrix::identity(dim, dim) }
    }

    pub fn sigma_x() -> Self {
        Self::qubit([[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]])
    }

    pub fn sigma_y() -> Self {
        Self::qubit([[c(0.0, 0.0), c(0.0, -1.0)], [c(0.0, 1.0), c(0.0, 0.0)]])
    }

    pub fn sigma_z() -> Self {
        Self::qubit([[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]])
    }

    fn qubit(rows: [[C64; 2]; 2]) -> Self {
        Self {
            m: CMatrix::from_row_slice(2, 2, &[rows[0][0], rows[0][1], rows[1][0], rows[1][1]]),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn trace(&self) -> C64 {
        self.m.trace()
    }

    pub fn adjoint(&self) -> Self {
        Self { m: self.m.adjoint() }
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        max_abs_diff(&self.m, &self.m.adjoint()) <= tol
    }

    pub fn mul(&self, other: &Operator) -> Result<Operator> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { left: self.dim(), right: other.dim() });
        }
        Ok(Operator { m: &self.m * &other.m })
    }
}

fn check_square_dim(m: &CMatrix) -> Result<()> {
    if m.nrows() != m.ncols() || !(m.nrows() == 2 || m.nrows() == 4) {
        return Err(Error::Dimension { expected: "2x2 or 4x4", found: (m.nrows(), m.ncols()) });
    }
    Ok(())
}

pub(crate) fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Frobenius norm of `a - b`.
pub fn frobenius_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Real eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let h = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(m.nrows(), m.ncols(), |r, k| eig.eigenvectors[(r, order[k])]);
    (values, vectors)
}

/// Hermitian, unit-trace, positive semidefinite 2x2 or 4x4 matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    m: CMatrix,
}

impl DensityMatrix {
    /// Validates `m` against the density-matrix invariants.
    pub fn new(m: CMatrix) -> Result<Self> {
        check_square_dim(&m)?;
        if m.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite);
        }
        let herm = max_abs_diff(&m, &m.adjoint());
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:e})")));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} != 1")));
        }
        let (eigs, _) = hermitian_eigen(&m);
        if eigs[0] < PSD_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {:e}", eigs[0])));
        }
        Ok(Self { m })
    }

    pub fn from_pure(s: &PureState) -> Self {
        let a = s.amps;
        Self {
            m: CMatrix::from_fn(2, 2, |r, k| a[r] * a[k].conj()),
        }
    }

    /// |ψ⟩⟨ψ| for a two-qubit ket given in Alice ⊗ Bob order.
    pub fn from_pair_ket(amps: [C64; 4]) -> Result<Self> {
        let norm: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Self { m: CMatrix::from_fn(4, 4, |r, k| amps[r] * amps[k].conj()) })
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        Self::new(CMatrix::identity(dim, dim) * c(1.0 / dim as f64, 0.0))
    }

    /// `weight * a + (1 - weight) * b`.
    pub fn mix(weight: f64, a: &DensityMatrix, b: &DensityMatrix) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::InvalidParameter(format!("mixing weight {weight} outside [0,1]")));
        }
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch { left: a.dim(), right: b.dim() });
        }
        Ok(Self { m: &a.m * c(weight, 0.0) + &b.m * c(1.0 - weight, 0.0) })
    }

    /// Wraps a matrix already known to satisfy the invariants up to rounding.
    pub(crate) fn from_trusted(m: CMatrix) -> Self {
        debug_assert!(Self::new(m.clone()).is_ok(), "trusted density matrix failed validation");
        Self { m }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigen(&self.m).0
    }

    /// Tr ρ², 1 for pure states.
    pub fn purity(&self) -> f64 {
        (&self.m * &self.m).trace().re
    }

    /// Bloch vector (⟨σx⟩, ⟨σy⟩, ⟨σz⟩) of a single-qubit state.
    pub fn bloch(&self) -> Result<[f64; 3]> {
        if self.dim() != 2 {
            return Err(Error::Dimension { expected: "2x2", found: (self.dim(), self.dim()) });
        }
        let m = &self.m;
        Ok([2.0 * m[(0, 1)].re, -2.0 * m[(0, 1)].im, (m[(0, 0)] - m[(1, 1)]).re])
    }

    pub fn frobenius_distance(&self, other: &DensityMatrix) -> f64 {
        frobenius_distance(&self.m, &other.m)
    }
}

/// |s⟩⟨s|.
pub fn projector(s: &PureState) -> Result<QubitOperator> {
    let norm = s.amps[0].norm_sqr() + s.amps[1].norm_sqr();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::NotNormalized(norm));
    }
    Ok(Operator { m: DensityMatrix::from_pure(s).m })
}

/// Kronecker product with Alice's factor first.
pub fn tensor(alice: &QubitOperator, bob: &QubitOperator) -> Result<Operator> {
    for op in [alice, bob] {
        if op.dim() != 2 {
            return Err(Error::Dimension { expected: "2x2", found: (op.dim(), op.dim()) });
        }
    }
    Ok(Operator { m: alice.m.kronecker(&bob.m) })
}

/// Product state ρ_A ⊗ ρ_B.
pub fn tensor_state(alice: &DensityMatrix, bob: &DensityMatrix) -> Result<DensityMatrix> {
    if alice.dim() != 2 || bob.dim() != 2 {
        return Err(Error::Dimension { expected: "2x2", found: (alice.dim(), bob.dim()) });
    }
    Ok(DensityMatrix::from_trusted(alice.m.kronecker(&bob.m)))
}

/// Partial trace of a raw 4x4 matrix over Alice's qubit.
pub(crate) fn trace_out_alice(m: &CMatrix) -> CMatrix {
    CMatrix::from_fn(2, 2, |b, bp| m[(b, bp)] + m[(2 + b, 2 + bp)])
}

/// Bob's reduced state Tr_Alice[ρ].
pub fn partial_trace_alice(rho: &DensityMatrix) -> Result<DensityMatrix> {
    if rho.dim() != 4 {
        return Err(Error::Dimension { expected: "4x4", found: (rho.dim(), rho.dim()) });
    }
    Ok(DensityMatrix::from_trusted(trace_out_alice(&rho.m)))
}

/// Tr[ρ M] for Hermitian `m`.
pub fn expectation(rho: &DensityMatrix, m: &Operator) -> Result<f64> {
    if rho.dim() != m.dim() {
        return Err(Error::DimensionMismatch { left: rho.dim(), right: m.dim() });
    }
    if !m.is_hermitian(HERMITIAN_TOL) {
        return Err(Error::NotHermitian);
    }
    let v = (&rho.m * &m.m).trace();
    if v.im.abs() > 1e-10 {
        return Err(Error::InvalidState(format!("expectation has imaginary part {:e}", v.im)));
    }
    Ok(v.re)
}

/// Uhlmann fidelity (Tr √(√ρ σ √ρ))².
///
/// When either argument is pure this reduces to Tr[ρσ], which is what the
/// singlet comparisons use; mixed pairs go through eigendecomposition.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch { left: rho.dim(), right: sigma.dim() });
    }
    let f = if (sigma.purity() - 1.0).abs() < 1e-12 || (rho.purity() - 1.0).abs() < 1e-12 {
        (&rho.m * &sigma.m).trace().re
    } else {
        let (vals, vecs) = hermitian_eigen(&rho.m);
        let sqrt_diag = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            vals.len(),
            vals.iter().map(|&l| c(l.max(0.0).sqrt(), 0.0)),
        ));
        let sqrt_rho = &vecs * sqrt_diag * vecs.adjoint();
        let inner = &sqrt_rho * &sigma.m * &sqrt_rho;
        let (mu, _) = hermitian_eigen(&inner);
        mu.iter().map(|&m| m.max(0.0).sqrt()).sum::<f64>().powi(2)
    };
    Ok(f.clamp(0.0, 1.0))
}
