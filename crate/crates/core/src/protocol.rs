//! Steering, sensing and readout for one run of the remote-sensing protocol.
//!
//! Outcome conventions: outcome 0 is the +1 eigenvalue, outcome 1 the −1
//! eigenvalue. Alice's basis and outcome fix the group label and, for the
//! ideal singlet, Bob's probe state:
//!
//! | basis | s_A | Alice projects on | label | Bob's probe (singlet) |
//! |-------|-----|-------------------|-------|-----------------------|
//! | Y     | 1   | \|L⟩              | A1    | \|R⟩                  |
//! | Y     | 0   | \|R⟩              | A2    | \|L⟩                  |
//! | X     | 1   | \|J⟩              | A3    | \|D⟩                  |
//! | X     | 0   | \|D⟩              | A4    | \|J⟩                  |
//!
//! Bob always reads out in the σ_y basis, s_B = 0 ↔ |R⟩.

use std::fmt;
use std::io::Write;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{self, projector, tensor, trace_out_alice, CMatrix, DensityMatrix, Operator, PureState, C64};
use crate::rng::{phase_stream, unit_f64, RoundStream};
use crate::source::SourceConfig;

/// Branches below this probability are treated as impossible.
pub const DEGENERATE_BRANCH: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    PauliX,
    PauliY,
}

impl Basis {
    /// Eigenstate for measurement outcome `s` (0 ↔ +1, 1 ↔ −1).
    pub fn eigenstate(self, s: u8) -> PureState {
        match (self, s) {
            (Basis::PauliY, 0) => PureState::r(),
            (Basis::PauliY, _) => PureState::l(),
            (Basis::PauliX, 0) => PureState::d(),
            (Basis::PauliX, _) => PureState::j(),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Basis::PauliX => "X",
            Basis::PauliY => "Y",
        }
    }
}

/// Alice's four possible (basis, outcome) results.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupLabel {
    A1,
    A2,
    A3,
    A4,
}

impl GroupLabel {
    pub const ALL: [GroupLabel; 4] = [GroupLabel::A1, GroupLabel::A2, GroupLabel::A3, GroupLabel::A4];

    pub fn from_outcome(basis: Basis, s_a: u8) -> Self {
        match (basis, s_a) {
            (Basis::PauliY, 1) => GroupLabel::A1,
            (Basis::PauliY, _) => GroupLabel::A2,
            (Basis::PauliX, 1) => GroupLabel::A3,
            (Basis::PauliX, _) => GroupLabel::A4,
        }
    }

    pub fn basis(self) -> Basis {
        match self {
            GroupLabel::A1 | GroupLabel::A2 => Basis::PauliY,
            GroupLabel::A3 | GroupLabel::A4 => Basis::PauliX,
        }
    }

    pub fn alice_outcome(self) -> u8 {
        match self {
            GroupLabel::A1 | GroupLabel::A3 => 1,
            GroupLabel::A2 | GroupLabel::A4 => 0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupLabel::A1 => "A1",
            GroupLabel::A2 => "A2",
            GroupLabel::A3 => "A3",
            GroupLabel::A4 => "A4",
        }
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Alice's collapsed branch: probability and Bob's normalized conditional state.
#[derive(Clone, Debug)]
pub struct Branch {
    pub probability: f64,
    pub bob_state: DensityMatrix,
}

/// Bob's conditional state when Alice measures `basis` and gets `s_a`.
pub fn steer_branch(rho: &DensityMatrix, basis: Basis, s_a: u8) -> Result<Branch> {
    if rho.dim() != 4 {
        return Err(Error::Dimension { expected: "4x4", found: (rho.dim(), rho.dim()) });
    }
    if s_a > 1 {
        return Err(Error::InvalidParameter(format!("outcome bit {s_a}")));
    }
    let p = projector(&basis.eigenstate(s_a))?;
    let pi = tensor(&p, &Operator::identity(2))?.into_matrix();
    let collapsed = &pi * rho.matrix() * &pi;
    let unnormalized = trace_out_alice(&collapsed);
    let probability = unnormalized.trace().re;
    if probability < DEGENERATE_BRANCH {
        return Err(Error::DegenerateBranch { probability });
    }
    let bob = unnormalized * C64::new(1.0 / probability, 0.0);
    let bob = (&bob + bob.adjoint()) * C64::new(0.5, 0.0);
    Ok(Branch { probability, bob_state: DensityMatrix::new(bob)? })
}

/// Samples Alice's outcome by the Born rule and returns Bob's collapsed state.
pub fn steer<R: RngCore + ?Sized>(rho: &DensityMatrix, basis: Basis, rng: &mut R) -> Result<(u8, DensityMatrix)> {
    let u = unit_f64(rng.next_u64());
    let zero = steer_branch(rho, basis, 0);
    let p0 = match &zero {
        Ok(b) => b.probability,
        Err(Error::DegenerateBranch { .. }) => 0.0,
        Err(_) => return zero.map(|b| (0, b.bob_state)),
    };
    if u < p0 {
        zero.map(|b| (0, b.bob_state))
    } else {
        steer_branch(rho, basis, 1).map(|b| (1, b.bob_state))
    }
}

/// e^{−iφσz/2} ρ e^{iφσz/2}.
pub fn phase_channel(rho_b: &DensityMatrix, phi: f64) -> Result<DensityMatrix> {
    if rho_b.dim() != 2 {
        return Err(Error::Dimension { expected: "2x2", found: (rho_b.dim(), rho_b.dim()) });
    }
    let half = (phi % std::f64::consts::TAU) / 2.0;
    let u = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
        C64::from_polar(1.0, -half),
        C64::from_polar(1.0, half),
    ]));
    let out = &u * rho_b.matrix() * u.adjoint();
    Ok(DensityMatrix::from_trusted((&out + out.adjoint()) * C64::new(0.5, 0.0)))
}

/// Tr[ρ̃ |R⟩⟨R|], Bob's probability of reading s_B = 0.
pub fn prob_bob_zero(rho_t: &DensityMatrix) -> Result<f64> {
    let pr = projector(&PureState::r())?;
    Ok(qcore::expectation(rho_t, &pr)?.clamp(0.0, 1.0))
}

fn sample_bob(p0: f64, detector: (f64, f64), u_outcome: f64, u_detect: f64) -> (u8, bool) {
    let s_b = if u_outcome < p0 { 0 } else { 1 };
    let eta = if s_b == 0 { detector.0 } else { detector.1 };
    (s_b, u_detect < eta)
}

/// σ_y readout with outcome-dependent detection efficiency.
pub fn bob_measure_y<R: RngCore + ?Sized>(
    rho_t: &DensityMatrix,
    detector: (f64, f64),
    rng: &mut R,
) -> Result<(u8, bool)> {
    let p0 = prob_bob_zero(rho_t)?;
    let u1 = unit_f64(rng.next_u64());
    let u2 = unit_f64(rng.next_u64());
    Ok(sample_bob(p0, detector, u1, u2))
}

/// Alice's secret basis and outcome for one round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AliceSecret {
    pub basis: Basis,
    pub s_a: u8,
}

impl AliceSecret {
    pub fn label(&self) -> GroupLabel {
        GroupLabel::from_outcome(self.basis, self.s_a)
    }
}

/// One post-selected round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// Position among the post-selected rounds, the j in s_B^(j).
    pub round_id: u32,
    /// Index of the emitted pair, counting undetected ones.
    pub pair_index: u64,
    pub alice_basis: Basis,
    pub s_a: u8,
    pub s_b: u8,
    pub detected: bool,
}

impl RoundRecord {
    pub fn outcome_label(&self) -> GroupLabel {
        GroupLabel::from_outcome(self.alice_basis, self.s_a)
    }
}

/// What estimators may read from a round. Eve's records have no secret.
pub trait SensingRecord {
    fn round_id(&self) -> u32;
    fn secret(&self) -> Option<AliceSecret>;
    fn s_b(&self) -> u8;
}

impl SensingRecord for RoundRecord {
    fn round_id(&self) -> u32 {
        self.round_id
    }
    fn secret(&self) -> Option<AliceSecret> {
        Some(AliceSecret { basis: self.alice_basis, s_a: self.s_a })
    }
    fn s_b(&self) -> u8 {
        self.s_b
    }
}

/// Bob's bit as Eve sees it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EveRecord {
    pub round_id: u32,
    pub s_b: u8,
}

impl SensingRecord for EveRecord {
    fn round_id(&self) -> u32 {
        self.round_id
    }
    fn secret(&self) -> Option<AliceSecret> {
        None
    }
    fn s_b(&self) -> u8 {
        self.s_b
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EveView {
    pub records: Vec<EveRecord>,
}

impl EveView {
    pub fn from_bits(bits: &[u8]) -> Self {
        Self {
            records: bits.iter().enumerate().map(|(j, &s_b)| EveRecord { round_id: j as u32, s_b }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// (N_B0, N_B1).
    pub fn counts(&self) -> (u64, u64) {
        let zeros = self.records.iter().filter(|r| r.s_b == 0).count() as u64;
        (zeros, self.records.len() as u64 - zeros)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, header: &str) -> std::io::Result<()> {
        writeln!(w, "{header}")?;
        writeln!(w, "round_id,s_B")?;
        for r in &self.records {
            writeln!(w, "{},{}", r.round_id, r.s_b)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    pub rounds: Vec<RoundRecord>,
    pub config: SourceConfig,
    phi_true: f64,
}

impl Transcript {
    /// Simulation ground truth. Not an estimator input.
    pub fn ground_truth_phase(&self) -> f64 {
        self.phi_true
    }

    pub fn s_b_bits(&self) -> Vec<u8> {
        self.rounds.iter().map(|r| r.s_b).collect()
    }

    pub fn secrets(&self) -> Vec<AliceSecret> {
        self.rounds.iter().map(|r| AliceSecret { basis: r.alice_basis, s_a: r.s_a }).collect()
    }

    /// Alice-side file: secrets present.
    pub fn write_csv<W: Write>(&self, mut w: W, header: &str) -> std::io::Result<()> {
        writeln!(w, "{header}")?;
        writeln!(w, "round_id,alice_basis,s_A,s_B")?;
        for r in &self.rounds {
            writeln!(w, "{},{},{},{}", r.round_id, r.alice_basis.symbol(), r.s_a, r.s_b)?;
        }
        Ok(())
    }
}

/// Per-branch probabilities for a fixed shared state and phase.
#[derive(Clone, Debug)]
pub struct BranchTable {
    /// [basis Y, basis X] × [s_A = 0, 1]: (branch probability, P(s_B = 0)).
    cells: [[Option<(f64, f64)>; 2]; 2],
}

impl BranchTable {
    pub fn new(rho: &DensityMatrix, phi: f64) -> Result<Self> {
        let mut cells = [[None; 2]; 2];
        for (bi, basis) in [Basis::PauliY, Basis::PauliX].into_iter().enumerate() {
            for s_a in 0..2u8 {
                cells[bi][s_a as usize] = match steer_branch(rho, basis, s_a) {
                    Ok(branch) => {
                        let evolved = phase_channel(&branch.bob_state, phi)?;
                        Some((branch.probability, prob_bob_zero(&evolved)?))
                    }
                    Err(Error::DegenerateBranch { .. }) => None,
                    Err(e) => return Err(e),
                };
            }
        }
        Ok(Self { cells })
    }

    fn basis_index(basis: Basis) -> usize {
        match basis {
            Basis::PauliY => 0,
            Basis::PauliX => 1,
        }
    }

    /// Branch probability of `s_a`, zero for degenerate branches.
    pub fn branch_probability(&self, basis: Basis, s_a: u8) -> f64 {
        self.cells[Self::basis_index(basis)][s_a as usize].map_or(0.0, |c| c.0)
    }

    /// P(s_B = 0 | basis, s_A), if the branch is possible.
    pub fn bob_zero(&self, basis: Basis, s_a: u8) -> Option<f64> {
        self.cells[Self::basis_index(basis)][s_a as usize].map(|c| c.1)
    }

    /// One round from four uniforms: basis, Alice outcome, Bob outcome, detection.
    pub fn sample(&self, u: &[f64; 4], detector: (f64, f64)) -> (AliceSecret, u8, bool) {
        let basis = if u[0] < 0.5 { Basis::PauliY } else { Basis::PauliX };
        let row = &self.cells[Self::basis_index(basis)];
        let s_a = match (row[0], row[1]) {
            (Some((p0, _)), Some(_)) => u8::from(u[1] >= p0),
            (Some(_), None) => 0,
            _ => 1,
        };
        let p_zero = row[s_a as usize].map_or(0.0, |c| c.1);
        let (s_b, detected) = sample_bob(p_zero, detector, u[2], u[3]);
        (AliceSecret { basis, s_a }, s_b, detected)
    }
}

/// Runs rounds at phase `phi` until `n` of them are detected.
///
/// Round draws come from the stream for `(config.seed, phi)`, so the
/// transcript is a pure function of its arguments.
pub fn run_protocol(config: &SourceConfig, phi: f64, n: usize) -> Result<Transcript> {
    config.noise.validate()?;
    let rounds = simulate_rounds(&config.shared_state()?, config.noise.detector(), config.seed, phi, n)?;
    Ok(Transcript { rounds, config: *config, phi_true: phi })
}

/// The round loop of [`run_protocol`] for an arbitrary shared state.
pub fn simulate_rounds(
    rho: &DensityMatrix,
    detector: (f64, f64),
    seed: u64,
    phi: f64,
    n: usize,
) -> Result<Vec<RoundRecord>> {
    if n == 0 || n > u32::MAX as usize {
        return Err(Error::InvalidParameter(format!("round count {n} outside 1..=2^32-1")));
    }
    if !phi.is_finite() {
        return Err(Error::InvalidParameter(format!("phase {phi}")));
    }
    let (e0, e1) = detector;
    if !(e0 > 0.0 && e0 <= 1.0 && e1 > 0.0 && e1 <= 1.0) {
        return Err(Error::InvalidParameter(format!("detector efficiencies {detector:?}")));
    }
    let table = BranchTable::new(rho, phi)?;
    let mut stream = RoundStream::new(seed, phase_stream(phi));
    let mut rounds = Vec::with_capacity(n);
    while rounds.len() < n {
        let (pair_index, u) = stream.next_round();
        let (secret, s_b, detected) = table.sample(&u, detector);
        if detected {
            rounds.push(RoundRecord {
                round_id: rounds.len() as u32,
                pair_index,
                alice_basis: secret.basis,
                s_a: secret.s_a,
                s_b,
                detected,
            });
        }
    }
    Ok(rounds)
}

/// Drops every secret, keeping (round_id, s_B).
pub fn eve_view(t: &Transcript) -> EveView {
    EveView {
        records: t.rounds.iter().map(|r| EveRecord { round_id: r.round_id, s_b: r.s_b }).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::max_abs_diff;
    use crate::rng::stream_rng;
    use crate::source::{ideal_singlet, werner, NoiseModel};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3};

    fn pure(s: PureState) -> DensityMatrix {
        DensityMatrix::from_pure(&s)
    }

    #[test]
    fn label_table() {
        assert_eq!(GroupLabel::from_outcome(Basis::PauliY, 1), GroupLabel::A1);
        assert_eq!(GroupLabel::from_outcome(Basis::PauliY, 0), GroupLabel::A2);
        assert_eq!(GroupLabel::from_outcome(Basis::PauliX, 1), GroupLabel::A3);
        assert_eq!(GroupLabel::from_outcome(Basis::PauliX, 0), GroupLabel::A4);
        for g in GroupLabel::ALL {
            assert_eq!(GroupLabel::from_outcome(g.basis(), g.alice_outcome()), g);
        }
    }

    #[test]
    fn singlet_probe_states_follow_label_table() {
        let s = ideal_singlet();
        let expect = [
            (Basis::PauliY, 1, PureState::r()),
            (Basis::PauliY, 0, PureState::l()),
            (Basis::PauliX, 1, PureState::d()),
            (Basis::PauliX, 0, PureState::j()),
        ];
        for (basis, s_a, probe) in expect {
            let b = steer_branch(&s, basis, s_a).unwrap();
            assert!((b.probability - 0.5).abs() < 1e-15);
            assert!(max_abs_diff(b.bob_state.matrix(), pure(probe).matrix()) < 1e-15);
        }
    }

    #[test]
    fn werner_steering_closed_form() {
        let p = 0.9;
        let b = steer_branch(&werner(p).unwrap(), Basis::PauliY, 1).unwrap();
        let expected = DensityMatrix::mix(p, &pure(PureState::r()), &DensityMatrix::maximally_mixed(2).unwrap()).unwrap();
        assert!(b.bob_state.frobenius_distance(&expected) < 1e-15);
    }

    #[test]
    fn degenerate_branch_raises() {
        // Alice holds |R⟩, so the |L⟩ outcome never happens.
        let mut amps = [C64::new(0.0, 0.0); 4];
        let r = PureState::r().amplitudes();
        amps[0] = r[0];
        amps[2] = r[1];
        let rho = DensityMatrix::from_pair_ket(amps).unwrap();
        assert!(matches!(steer_branch(&rho, Basis::PauliY, 1), Err(Error::DegenerateBranch { .. })));
        let mut rng = stream_rng(1, 0);
        for _ in 0..100 {
            assert_eq!(steer(&rho, Basis::PauliY, &mut rng).unwrap().0, 0);
        }
    }

    #[test]
    fn phase_channel_examples() {
        let d = pure(PureState::d());
        let rotated = phase_channel(&d, FRAC_PI_2).unwrap();
        assert!(rotated.frobenius_distance(&pure(PureState::r())) < 1e-15);
        assert!(phase_channel(&d, 0.0).unwrap().frobenius_distance(&d) < 1e-15);
        let h = pure(PureState::h());
        assert!(phase_channel(&h, 1.234).unwrap().frobenius_distance(&h) < 1e-15);
    }

    #[test]
    fn phase_channel_composes() {
        let rho = steer_branch(&werner(0.8).unwrap(), Basis::PauliX, 1).unwrap().bob_state;
        let (a, b) = (0.7, 2.9);
        let two = phase_channel(&phase_channel(&rho, a).unwrap(), b).unwrap();
        let one = phase_channel(&rho, a + b).unwrap();
        assert!(two.frobenius_distance(&one) < 1e-12);
    }

    #[test]
    fn bob_readout_examples() {
        let mut rng = stream_rng(9, 1);
        let r = pure(PureState::r());
        for _ in 0..1000 {
            assert_eq!(bob_measure_y(&r, (1.0, 1.0), &mut rng).unwrap(), (0, true));
        }
        // I/2 with η1 = 0.9: post-selected P(0) = 1/1.9.
        let mixed = DensityMatrix::maximally_mixed(2).unwrap();
        let (mut zeros, mut kept) = (0u32, 0u32);
        let n = 200_000;
        for _ in 0..n {
            let (s, det) = bob_measure_y(&mixed, (1.0, 0.9), &mut rng).unwrap();
            if det {
                kept += 1;
                zeros += u32::from(s == 0);
            }
        }
        let p = zeros as f64 / kept as f64;
        let expected = 1.0 / 1.9;
        let sigma = (expected * (1.0 - expected) / kept as f64).sqrt();
        assert!((p - expected).abs() < 4.0 * sigma, "p = {p}");
    }

    #[test]
    fn steering_does_not_signal() {
        let s = ideal_singlet();
        for basis in [Basis::PauliX, Basis::PauliY] {
            let b0 = steer_branch(&s, basis, 0).unwrap();
            let b1 = steer_branch(&s, basis, 1).unwrap();
            assert!((b0.probability + b1.probability - 1.0).abs() < 1e-12);
            let avg = b0.bob_state.matrix() * C64::new(b0.probability, 0.0)
                + b1.bob_state.matrix() * C64::new(b1.probability, 0.0);
            let d = crate::qcore::frobenius_distance(&avg, DensityMatrix::maximally_mixed(2).unwrap().matrix());
            assert!(d < 1e-12);
        }
    }

    #[test]
    fn ideal_run_phase_zero() {
        let t = run_protocol(&SourceConfig::ideal(5), 0.0, 10_000).unwrap();
        assert_eq!(t.rounds.len(), 10_000);
        let a1: Vec<_> = t.rounds.iter().filter(|r| r.outcome_label() == GroupLabel::A1).collect();
        assert!(!a1.is_empty());
        assert!(a1.iter().all(|r| r.s_b == 0));
        assert!(t.rounds.iter().enumerate().all(|(j, r)| r.round_id as usize == j && r.detected));
    }

    #[test]
    fn run_is_reproducible_and_phase_keyed() {
        let cfg = SourceConfig { noise: NoiseModel { werner_p: 0.95, detector_eta1: 0.9, ..NoiseModel::ideal() }, seed: 77 };
        let a = run_protocol(&cfg, FRAC_PI_3, 2000).unwrap();
        let b = run_protocol(&cfg, FRAC_PI_3, 2000).unwrap();
        assert_eq!(a, b);
        let c = run_protocol(&cfg, FRAC_PI_3 + 0.1, 2000).unwrap();
        assert_ne!(a.s_b_bits(), c.s_b_bits());
        // Undetected pairs leave gaps in pair_index.
        assert!(a.rounds.last().unwrap().pair_index >= 1999);
    }

    #[test]
    fn eve_view_drops_secrets() {
        let t = run_protocol(&SourceConfig::ideal(1), 0.4, 50).unwrap();
        let v = eve_view(&t);
        assert_eq!(v.len(), 50);
        assert!(v.records.iter().all(|r| r.secret().is_none()));
        let json = serde_json::to_string(&v).unwrap();
        assert!(!json.contains("basis") && !json.contains("s_a"));
        assert_eq!(v, EveView::from_bits(&t.s_b_bits()));
    }

    #[test]
    fn invalid_runs_rejected() {
        let cfg = SourceConfig::ideal(1);
        assert!(run_protocol(&cfg, 0.0, 0).is_err());
        let bad = SourceConfig { noise: NoiseModel { werner_p: 2.0, ..NoiseModel::ideal() }, seed: 0 };
        assert!(run_protocol(&bad, 0.0, 10).is_err());
    }
}
