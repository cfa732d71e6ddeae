//! Alice's (and Eve's) classical post-processing.
//!
//! Alice groups Bob's bits by her secret label, predicts each group's
//! P(s_B = 0 | φ) from the reconstructed shared state, and inverts. Fisher
//! information uses the Bernoulli form (∂P/∂φ)² / (P(1−P)).
//!
//! For any steered qubit with Bloch vector (x, y, z), the z-rotation by φ
//! followed by the σ_y readout gives
//!
//! ```text
//! P(φ) = ½ (1 + x sin φ + y cos φ)
//! ```
//!
//! [`GroupCurve`] evaluates this closed form; [`model_probability`] goes the
//! long way through the density matrices. Tests hold the two together.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{phase_channel, prob_bob_zero, steer_branch, AliceSecret, Basis, GroupLabel, SensingRecord};
use crate::qcore::DensityMatrix;
use crate::source::ideal_singlet;

/// Default grid step for phase inversion, radians.
pub const DEFAULT_GRID_STEP: f64 = 1e-3;

/// Mean squared slope of the pooled likelihood below which an estimate is
/// reported as low-curvature.
pub const LOW_SENSITIVITY: f64 = 1e-3;

const GOLDEN_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupStats {
    pub label: GroupLabel,
    pub n0: u64,
    pub n1: u64,
}

impl GroupStats {
    pub fn empty(label: GroupLabel) -> Self {
        Self { label, n0: 0, n1: 0 }
    }

    pub fn total(&self) -> u64 {
        self.n0 + self.n1
    }

    /// n0 / (n0 + n1), NaN for an empty group.
    pub fn p_exp(&self) -> f64 {
        self.n0 as f64 / self.total() as f64
    }
}

/// Partitions rounds by Alice's label and counts Bob's bits in each group.
pub fn classify<R: SensingRecord>(records: &[R]) -> Result<[GroupStats; 4]> {
    let mut out = GroupLabel::ALL.map(GroupStats::empty);
    for r in records {
        let secret = r.secret().ok_or(Error::MissingSecrets(r.round_id()))?;
        let g = &mut out[secret.label().index()];
        if r.s_b() == 0 {
            g.n0 += 1;
        } else {
            g.n1 += 1;
        }
    }
    Ok(out)
}

/// Applies outcome-dependent detection to a raw P(s_B = 0).
fn post_select(raw: f64, detector: (f64, f64)) -> f64 {
    let (e0, e1) = detector;
    if e0 == e1 {
        return raw;
    }
    let num = e0 * raw;
    num / (num + e1 * (1.0 - raw))
}

/// d post_select / d raw.
fn post_select_slope(raw: f64, detector: (f64, f64)) -> f64 {
    let (e0, e1) = detector;
    if e0 == e1 {
        return 1.0;
    }
    let d = e0 * raw + e1 * (1.0 - raw);
    e0 * e1 / (d * d)
}

/// Closed-form P(s_B = 0 | φ) for one group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupCurve {
    pub label: GroupLabel,
    /// Conditional probability of this label given Alice's basis.
    pub branch_probability: f64,
    pub bloch_x: f64,
    pub bloch_y: f64,
    pub detector: (f64, f64),
}

impl GroupCurve {
    /// Readout probability before post-selection.
    pub fn raw(&self, phi: f64) -> f64 {
        (0.5 * (1.0 + self.bloch_x * phi.sin() + self.bloch_y * phi.cos())).clamp(0.0, 1.0)
    }

    pub fn raw_slope(&self, phi: f64) -> f64 {
        0.5 * (self.bloch_x * phi.cos() - self.bloch_y * phi.sin())
    }

    pub fn probability(&self, phi: f64) -> f64 {
        post_select(self.raw(phi), self.detector)
    }

    pub fn slope(&self, phi: f64) -> f64 {
        self.raw_slope(phi) * post_select_slope(self.raw(phi), self.detector)
    }

    /// Per-round Fisher information with the exact derivative.
    pub fn fisher(&self, phi: f64) -> Result<f64> {
        cfi(self.probability(phi), self.slope(phi))
    }

    /// Phases in (0, π) where the curve turns; P is monotone between them.
    fn turning_points(&self) -> Vec<f64> {
        if self.bloch_x.hypot(self.bloch_y) < 1e-12 {
            return Vec::new();
        }
        // Extremes of x sin φ + y cos φ sit at atan2(x, y) + mπ.
        let theta = self.bloch_x.atan2(self.bloch_y).rem_euclid(PI);
        if theta > 0.0 && theta < PI {
            vec![theta]
        } else {
            Vec::new()
        }
    }
}

/// Alice's probability model built from her reconstructed shared state.
#[derive(Clone, Debug)]
pub struct ProbabilityModel {
    rho_hat: DensityMatrix,
    detector: (f64, f64),
    curves: [GroupCurve; 4],
    probes: Vec<DensityMatrix>,
}

impl ProbabilityModel {
    pub fn new(rho_hat: DensityMatrix) -> Result<Self> {
        Self::with_detector(rho_hat, (1.0, 1.0))
    }

    pub fn ideal_singlet() -> Self {
        Self::new(ideal_singlet()).expect("singlet has no degenerate branch")
    }

    /// Model that also accounts for outcome-dependent detection efficiency.
    pub fn with_detector(rho_hat: DensityMatrix, detector: (f64, f64)) -> Result<Self> {
        if rho_hat.dim() != 4 {
            return Err(Error::Dimension { expected: "4x4", found: (rho_hat.dim(), rho_hat.dim()) });
        }
        if !(detector.0 > 0.0 && detector.0 <= 1.0 && detector.1 > 0.0 && detector.1 <= 1.0) {
            return Err(Error::InvalidParameter(format!("detector efficiencies {detector:?}")));
        }
        let mut probes = Vec::with_capacity(4);
        let mut curves = Vec::with_capacity(4);
        for label in GroupLabel::ALL {
            let branch = steer_branch(&rho_hat, label.basis(), label.alice_outcome())?;
            let [bx, by, _] = branch.bob_state.bloch()?;
            curves.push(GroupCurve {
                label,
                branch_probability: branch.probability,
                bloch_x: bx,
                bloch_y: by,
                detector,
            });
            probes.push(branch.bob_state);
        }
        Ok(Self { rho_hat, detector, curves: curves.try_into().unwrap(), probes })
    }

    pub fn rho_hat(&self) -> &DensityMatrix {
        &self.rho_hat
    }

    pub fn detector(&self) -> (f64, f64) {
        self.detector
    }

    pub fn curve(&self, label: GroupLabel) -> &GroupCurve {
        &self.curves[label.index()]
    }

    /// Probe state ρ_Bi before sensing.
    pub fn probe(&self, label: GroupLabel) -> &DensityMatrix {
        &self.probes[label.index()]
    }

    /// Eve's theoretical line: the unweighted mean of the four group curves.
    pub fn eve_curve(&self, phi: f64) -> f64 {
        self.curves.iter().map(|c| c.probability(phi)).sum::<f64>() / 4.0
    }

    /// Exact post-selected marginal P(s_B = 0) over all rounds.
    pub fn eve_marginal(&self, phi: f64) -> f64 {
        let (e0, e1) = self.detector;
        let (mut num, mut den) = (0.0, 0.0);
        for c in &self.curves {
            let w = 0.5 * c.branch_probability;
            let r = c.raw(phi);
            num += w * r * e0;
            den += w * (r * e0 + (1.0 - r) * e1);
        }
        num / den
    }

    /// Exact probability that s_A ⊕ s_B ⊕ 1 = 0 for rounds in `basis`.
    pub fn xor_zero_probability(&self, basis: Basis, phi: f64) -> f64 {
        let (e0, e1) = self.detector;
        let (mut num, mut den) = (0.0, 0.0);
        for c in self.curves.iter().filter(|c| c.label.basis() == basis) {
            let r = c.raw(phi);
            let (p0, p1) = (c.branch_probability * r * e0, c.branch_probability * (1.0 - r) * e1);
            // XOR = 0 exactly when s_B differs from s_A.
            num += if c.label.alice_outcome() == 1 { p0 } else { p1 };
            den += p0 + p1;
        }
        num / den
    }
}

/// Tr[ρ̃_Bi |R⟩⟨R|] evaluated through the steered and rotated density matrix,
/// then corrected for detection efficiency.
pub fn model_probability(model: &ProbabilityModel, label: GroupLabel, phi: f64) -> Result<f64> {
    let evolved = phase_channel(model.probe(label), phi)?;
    Ok(post_select(prob_bob_zero(&evolved)?, model.detector))
}

/// Minimizes `f` on [a, b] by golden-section search.
fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > GOLDEN_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Grid argmin of `f` on [lo, hi] (first minimum wins), refined by golden
/// section inside the neighbouring cells.
fn grid_argmin<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, step: f64) -> f64 {
    let cells = ((hi - lo) / step).floor() as usize;
    let mut best = (lo, f(lo));
    for k in 1..=cells + 1 {
        let phi = (lo + k as f64 * step).min(hi);
        let v = f(phi);
        if v < best.1 {
            best = (phi, v);
        }
        if phi >= hi {
            break;
        }
    }
    let (a, b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let refined = golden_min(&f, a, b);
    if f(refined) < best.1 {
        refined
    } else {
        best.0
    }
}

fn check_step(grid_step: f64) -> Result<()> {
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(Error::InvalidParameter(format!("grid step {grid_step}")));
    }
    Ok(())
}

/// φ̂ minimizing |P_model(φ) − p_exp| over [0, π].
///
/// With a `hint`, the search is limited to the monotone stretch of the model
/// curve that contains the hint, which resolves the mirror ambiguity of
/// curves that turn inside (0, π).
pub fn estimate_phase_grid(
    model: &ProbabilityModel,
    g: &GroupStats,
    grid_step: f64,
    hint: Option<f64>,
) -> Result<f64> {
    check_step(grid_step)?;
    if g.total() == 0 {
        return Err(Error::EmptyGroup(g.label.name()));
    }
    let curve = model.curve(g.label);
    let target = g.p_exp();
    let (mut lo, mut hi) = (0.0f64, PI);
    if let Some(h) = hint {
        for t in curve.turning_points() {
            if t <= h {
                lo = lo.max(t);
            } else {
                hi = hi.min(t);
            }
        }
    }
    Ok(grid_argmin(|phi| (curve.probability(phi) - target).abs(), lo, hi, grid_step))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BernoulliCount {
    pub zeros: u64,
    pub total: u64,
}

impl BernoulliCount {
    pub fn fraction(&self) -> f64 {
        self.zeros as f64 / self.total as f64
    }
}

/// Per-basis counts of s_A ⊕ s_B ⊕ 1 = 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct XorSummary {
    pub y: BernoulliCount,
    pub x: BernoulliCount,
}

impl XorSummary {
    pub fn basis(&self, basis: Basis) -> &BernoulliCount {
        match basis {
            Basis::PauliY => &self.y,
            Basis::PauliX => &self.x,
        }
    }

    /// Keeps only one basis, as if Alice never measured the other.
    pub fn only(&self, basis: Basis) -> Self {
        match basis {
            Basis::PauliY => Self { y: self.y, x: BernoulliCount::default() },
            Basis::PauliX => Self { y: BernoulliCount::default(), x: self.x },
        }
    }
}

pub fn xor_decode<R: SensingRecord>(records: &[R]) -> Result<XorSummary> {
    let mut out = XorSummary::default();
    for r in records {
        let AliceSecret { basis, s_a } = r.secret().ok_or(Error::MissingSecrets(r.round_id()))?;
        let slot = match basis {
            Basis::PauliY => &mut out.y,
            Basis::PauliX => &mut out.x,
        };
        slot.total += 1;
        if s_a ^ r.s_b() ^ 1 == 0 {
            slot.zeros += 1;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledEstimate {
    pub phi: f64,
    /// The likelihood is nearly flat in φ at the estimate (e.g. a single
    /// basis at one of its blind points).
    pub low_curvature: bool,
}

fn log_likelihood(model: &ProbabilityModel, s: &XorSummary, phi: f64) -> f64 {
    let term = |k: u64, q: f64| if k == 0 { 0.0 } else { k as f64 * q.ln() };
    [Basis::PauliY, Basis::PauliX]
        .iter()
        .filter(|&&b| s.basis(b).total > 0)
        .map(|&b| {
            let c = s.basis(b);
            let q = model.xor_zero_probability(b, phi);
            term(c.zeros, q) + term(c.total - c.zeros, 1.0 - q)
        })
        .sum()
}

/// Maximizes the two-binomial XOR likelihood over φ ∈ [0, π].
pub fn pooled_mle(summary: &XorSummary, model: &ProbabilityModel, grid_step: f64) -> Result<PooledEstimate> {
    check_step(grid_step)?;
    let n = summary.x.total + summary.y.total;
    if n == 0 {
        return Err(Error::NoData);
    }
    let phi = grid_argmin(|p| -log_likelihood(model, summary, p), 0.0, PI, grid_step);
    let h = 1e-6;
    let sensitivity: f64 = [Basis::PauliY, Basis::PauliX]
        .iter()
        .map(|&b| {
            let (a, c) = ((phi - h).max(0.0), (phi + h).min(PI));
            let slope = (model.xor_zero_probability(b, c) - model.xor_zero_probability(b, a)) / (c - a);
            summary.basis(b).total as f64 * slope * slope
        })
        .sum::<f64>()
        / n as f64;
    Ok(PooledEstimate { phi, low_curvature: sensitivity < LOW_SENSITIVITY })
}

/// Least-squares slope of the line through three (φ, P) points.
pub fn three_point_slope(p: [f64; 3], phi: [f64; 3]) -> Result<f64> {
    Ok(slope_weights(phi)?.iter().zip(p).map(|(w, p)| w * p).sum())
}

/// Weights w_k with slope = Σ w_k P_k.
pub fn slope_weights(phi: [f64; 3]) -> Result<[f64; 3]> {
    if !(phi[0] < phi[1] && phi[1] < phi[2]) {
        return Err(Error::CoincidentPhases(phi));
    }
    let mean = phi.iter().sum::<f64>() / 3.0;
    let sxx: f64 = phi.iter().map(|x| (x - mean).powi(2)).sum();
    Ok(phi.map(|x| (x - mean) / sxx))
}

/// Bernoulli Fisher information (∂P/∂φ)² / (P(1−P)).
pub fn cfi(p: f64, dpdphi: f64) -> Result<f64> {
    if !(p.is_finite() && dpdphi.is_finite()) || !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("p={p}, slope={dpdphi}")));
    }
    if p == 0.0 || p == 1.0 {
        return Err(Error::BoundaryProbability { p, slope: dpdphi });
    }
    Ok(dpdphi * dpdphi / (p * (1.0 - p)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseEstimate {
    pub per_group: [(GroupLabel, f64); 4],
    /// Likelihood estimate from the XOR-decoded bits of both bases.
    pub pooled_xor: f64,
    /// Inverse-variance combination of the four per-group estimates.
    pub pooled_weighted: f64,
    pub grid_resolution: f64,
    pub low_curvature: bool,
}

impl PhaseEstimate {
    pub fn group_mean(&self) -> f64 {
        self.per_group.iter().map(|g| g.1).sum::<f64>() / 4.0
    }
}

/// Per-group and pooled estimates for one phase point.
pub fn estimate_phase(
    model: &ProbabilityModel,
    groups: &[GroupStats; 4],
    xor: &XorSummary,
    grid_step: f64,
) -> Result<PhaseEstimate> {
    let pooled = pooled_mle(xor, model, grid_step)?;
    let mut per_group = [(GroupLabel::A1, 0.0); 4];
    let (mut wsum, mut acc) = (0.0, 0.0);
    for (slot, g) in per_group.iter_mut().zip(groups) {
        let phi = estimate_phase_grid(model, g, grid_step, Some(pooled.phi))?;
        *slot = (g.label, phi);
        // Groups sitting on P ∈ {0, 1} carry no usable weight.
        if let Ok(f) = model.curve(g.label).fisher(phi) {
            let w = g.total() as f64 * f;
            wsum += w;
            acc += w * phi;
        }
    }
    let pooled_weighted = if wsum > 0.0 { acc / wsum } else { pooled.phi };
    Ok(PhaseEstimate {
        per_group,
        pooled_xor: pooled.phi,
        pooled_weighted,
        grid_resolution: grid_step,
        low_curvature: pooled.low_curvature,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DerivativeMethod {
    Analytic,
    ThreePoint,
}

/// A data series in the CFI table: one of Alice's groups or Bob's raw bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Series {
    Group(GroupLabel),
    Bob,
}

impl Series {
    pub fn name(&self) -> &'static str {
        match self {
            Series::Group(g) => g.name(),
            Series::Bob => "B",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s == "B" {
            return Some(Series::Bob);
        }
        GroupLabel::ALL.iter().find(|g| g.name() == s).map(|&g| Series::Group(g))
    }
}

/// One observed point of a P(φ) curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub phi: f64,
    pub n0: u64,
    pub n1: u64,
}

impl CurvePoint {
    pub fn p(&self) -> f64 {
        self.n0 as f64 / (self.n0 + self.n1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfiEntry {
    pub series: Series,
    pub center_index: usize,
    pub phase: f64,
    pub p: f64,
    pub slope: f64,
    /// None when P at the centre is 0 or 1.
    pub fisher: Option<f64>,
    /// Zero-slope sampling floor of the three-point estimate, Σ w_k² / n_k.
    pub floor: f64,
    /// Set when the value was taken from a neighbouring centre.
    pub substituted_from: Option<usize>,
}

/// Three-point CFI of a series at `center` using its two neighbours.
pub fn three_point_cfi(series: Series, points: &[CurvePoint], center: usize) -> Result<CfiEntry> {
    if center == 0 || center + 1 >= points.len() {
        return Err(Error::InvalidParameter(format!(
            "centre index {center} needs neighbours on both sides ({} points)",
            points.len()
        )));
    }
    let w = &points[center - 1..=center + 1];
    let phi = [w[0].phi, w[1].phi, w[2].phi];
    let weights = slope_weights(phi)?;
    let slope = three_point_slope([w[0].p(), w[1].p(), w[2].p()], phi)?;
    let floor = weights.iter().zip(w).map(|(wk, pt)| wk * wk / (pt.n0 + pt.n1) as f64).sum();
    let p = w[1].p();
    let fisher = match cfi(p, slope) {
        Ok(f) => Some(f),
        Err(Error::BoundaryProbability { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(CfiEntry { series, center_index: center, phase: phi[1], p, slope, fisher, floor, substituted_from: None })
}

/// Three-point CFI with the boundary fallback: if P hits 0 or 1 at the
/// centre, the nearest neighbouring centre with an interior P is used and
/// the entry is flagged.
pub fn three_point_cfi_with_fallback(series: Series, points: &[CurvePoint], center: usize) -> Result<CfiEntry> {
    let entry = three_point_cfi(series, points, center)?;
    if entry.fisher.is_some() {
        return Ok(entry);
    }
    for alt in [center.wrapping_sub(1), center + 1] {
        if alt == 0 || alt == usize::MAX || alt + 1 >= points.len() {
            continue;
        }
        let sub = three_point_cfi(series, points, alt)?;
        if sub.fisher.is_some() {
            return Ok(CfiEntry { center_index: center, substituted_from: Some(alt), ..sub });
        }
    }
    Ok(entry)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfiReport {
    pub center_index: usize,
    pub per_group: [CfiEntry; 4],
    pub eve: CfiEntry,
    pub asymmetry_ratio: f64,
    pub derivative_method: DerivativeMethod,
}

impl CfiReport {
    pub fn per_group_f(&self) -> [f64; 4] {
        self.per_group.map(|e| e.fisher.unwrap_or(0.0))
    }

    pub fn alice_max(&self) -> f64 {
        self.per_group_f().into_iter().fold(0.0, f64::max)
    }

    pub fn eve_f(&self) -> f64 {
        self.eve.fisher.unwrap_or(0.0)
    }
}

/// max_i F_i / max(F_Eve, floor).
pub fn asymmetry_ratio(alice_max: f64, eve_f: f64, floor: f64) -> f64 {
    alice_max / eve_f.max(floor)
}

/// Bob's unclassified statistics at each phase point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvePoint {
    /// Mean of Alice's four per-group estimates at this point.
    pub phase_axis: f64,
    pub n0: u64,
    pub n1: u64,
    pub p_exp: f64,
    /// Mean of the four model curves at `phase_axis`.
    pub p_model: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EveReport {
    pub points: Vec<EvePoint>,
    pub cfi: Vec<CfiEntry>,
}

/// Eve's P(s_B = 0) per phase point and her three-point CFI at `centering`.
pub fn eve_report(
    views: &[crate::protocol::EveView],
    alice: &[PhaseEstimate],
    model: &ProbabilityModel,
    centering: &[usize],
) -> Result<EveReport> {
    if views.len() < 3 {
        return Err(Error::InvalidParameter(format!("need at least 3 phase points, got {}", views.len())));
    }
    if views.len() != alice.len() {
        return Err(Error::InvalidParameter("one Alice estimate per phase point required".into()));
    }
    let points: Vec<EvePoint> = views
        .iter()
        .zip(alice)
        .map(|(v, a)| {
            let (n0, n1) = v.counts();
            let axis = a.group_mean();
            EvePoint { phase_axis: axis, n0, n1, p_exp: n0 as f64 / (n0 + n1) as f64, p_model: model.eve_curve(axis) }
        })
        .collect();
    let curve: Vec<CurvePoint> = points.iter().map(|p| CurvePoint { phi: p.phase_axis, n0: p.n0, n1: p.n1 }).collect();
    let cfi = centering
        .iter()
        .map(|&c| three_point_cfi_with_fallback(Series::Bob, &curve, c))
        .collect::<Result<_>>()?;
    Ok(EveReport { points, cfi })
}

/// Closed-form expectation of the three-point CFI table at `center` for a
/// sweep over `phases` with `rounds` detected rounds per phase.
///
/// Alice's groups use exact model probabilities. Eve's expected value adds
/// the zero-slope sampling floor to her exact three-point CFI.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedCfi {
    pub per_group: [f64; 4],
    pub eve_exact: f64,
    pub eve_expected: f64,
}

impl PredictedCfi {
    pub fn alice_max(&self) -> f64 {
        self.per_group.iter().copied().fold(0.0, f64::max)
    }

    pub fn ratio(&self) -> f64 {
        self.alice_max() / self.eve_expected
    }
}

pub fn predicted_cfi(model: &ProbabilityModel, phases: &[f64], center: usize, rounds: u64) -> Result<PredictedCfi> {
    if center == 0 || center + 1 >= phases.len() {
        return Err(Error::InvalidParameter(format!("centre index {center}")));
    }
    let phi = [phases[center - 1], phases[center], phases[center + 1]];
    let weights = slope_weights(phi)?;
    let mut per_group = [0.0; 4];
    for (slot, label) in per_group.iter_mut().zip(GroupLabel::ALL) {
        let c = model.curve(label);
        let slope = three_point_slope(phi.map(|x| c.probability(x)), phi)?;
        *slot = cfi(c.probability(phi[1]), slope).unwrap_or(0.0);
    }
    let eve_p = phi.map(|x| model.eve_marginal(x));
    let eve_slope = three_point_slope(eve_p, phi)?;
    let eve_exact = cfi(eve_p[1], eve_slope)?;
    let floor: f64 = weights.iter().map(|w| w * w / rounds as f64).sum();
    Ok(PredictedCfi { per_group, eve_exact, eve_expected: eve_exact + floor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{run_protocol, EveRecord, RoundRecord};
    use crate::source::{werner, SourceConfig};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4};

    fn rec(round_id: u32, basis: Basis, s_a: u8, s_b: u8) -> RoundRecord {
        RoundRecord { round_id, pair_index: round_id as u64, alice_basis: basis, s_a, s_b, detected: true }
    }

    #[test]
    fn classify_synthetic_rounds() {
        let mut rounds = Vec::new();
        for (i, (b, s)) in [(Basis::PauliY, 1), (Basis::PauliY, 0), (Basis::PauliX, 1), (Basis::PauliX, 0)]
            .into_iter()
            .enumerate()
        {
            rounds.push(rec(2 * i as u32, b, s, 0));
            rounds.push(rec(2 * i as u32 + 1, b, s, 1));
        }
        let g = classify(&rounds).unwrap();
        for (k, stats) in g.iter().enumerate() {
            assert_eq!(stats.label, GroupLabel::ALL[k]);
            assert_eq!((stats.n0, stats.n1), (1, 1));
        }
        let eve = [EveRecord { round_id: 0, s_b: 1 }];
        assert!(matches!(classify(&eve), Err(Error::MissingSecrets(0))));
    }

    #[test]
    fn singlet_model_matches_closed_forms() {
        let m = ProbabilityModel::ideal_singlet();
        for phi in [0.0, 0.3, FRAC_PI_3, 2.0, PI] {
            let p = |l| model_probability(&m, l, phi).unwrap();
            assert!((p(GroupLabel::A1) - 0.5 * (1.0 + phi.cos())).abs() < 1e-12);
            assert!((p(GroupLabel::A2) - 0.5 * (1.0 - phi.cos())).abs() < 1e-12);
            assert!((p(GroupLabel::A3) - 0.5 * (1.0 + phi.sin())).abs() < 1e-12);
            assert!((p(GroupLabel::A4) - 0.5 * (1.0 - phi.sin())).abs() < 1e-12);
        }
        assert!(model_probability(&m, GroupLabel::A4, FRAC_PI_2).unwrap().abs() < 1e-15);
    }

    #[test]
    fn werner_model_closed_form() {
        let p = 0.9;
        let m = ProbabilityModel::new(werner(p).unwrap()).unwrap();
        for phi in [0.1, 1.0, 2.5] {
            let got = model_probability(&m, GroupLabel::A1, phi).unwrap();
            assert!((got - 0.5 * (1.0 + p * phi.cos())).abs() < 1e-12);
        }
    }

    #[test]
    fn curve_matches_matrix_route_with_detector() {
        let m = ProbabilityModel::with_detector(werner(0.93).unwrap(), (1.0, 0.8)).unwrap();
        for label in GroupLabel::ALL {
            for k in 0..50 {
                let phi = k as f64 * 0.13;
                let a = model_probability(&m, label, phi).unwrap();
                let b = m.curve(label).probability(phi);
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_inversion_examples() {
        let m = ProbabilityModel::ideal_singlet();
        let g = GroupStats { label: GroupLabel::A1, n0: 3, n1: 1 };
        let phi = estimate_phase_grid(&m, &g, DEFAULT_GRID_STEP, None).unwrap();
        assert!((phi - FRAC_PI_3).abs() < 1e-6);
        let g = GroupStats { label: GroupLabel::A3, n0: 10, n1: 0 };
        let phi = estimate_phase_grid(&m, &g, DEFAULT_GRID_STEP, None).unwrap();
        assert!((phi - FRAC_PI_2).abs() < 1e-5, "{phi}");
        assert!(matches!(
            estimate_phase_grid(&m, &GroupStats::empty(GroupLabel::A2), 1e-3, None),
            Err(Error::EmptyGroup("A2"))
        ));
        assert!(estimate_phase_grid(&m, &g, 0.0, None).is_err());
    }

    #[test]
    fn hint_selects_mirror_branch() {
        let m = ProbabilityModel::ideal_singlet();
        // (1 + sin φ)/2 = 0.9 has roots at φ and π − φ.
        let lo = (0.8f64).asin();
        let g = GroupStats { label: GroupLabel::A3, n0: 9, n1: 1 };
        let no_hint = estimate_phase_grid(&m, &g, 1e-3, None).unwrap();
        let right = estimate_phase_grid(&m, &g, 1e-3, Some(2.0)).unwrap();
        assert!((no_hint - lo).abs() < 1e-6);
        assert!((right - (PI - lo)).abs() < 1e-6);
    }

    #[test]
    fn xor_decode_counts() {
        let rounds = [
            rec(0, Basis::PauliY, 1, 0), // XOR 0
            rec(1, Basis::PauliY, 0, 1), // XOR 0
            rec(2, Basis::PauliY, 0, 0), // XOR 1
            rec(3, Basis::PauliX, 1, 1), // XOR 1
        ];
        let s = xor_decode(&rounds).unwrap();
        assert_eq!(s.y, BernoulliCount { zeros: 2, total: 3 });
        assert_eq!(s.x, BernoulliCount { zeros: 0, total: 1 });
    }

    #[test]
    fn xor_model_for_singlet() {
        let m = ProbabilityModel::ideal_singlet();
        let phi = FRAC_PI_3;
        assert!((m.xor_zero_probability(Basis::PauliY, phi) - 0.75).abs() < 1e-12);
        let expected_x = 0.5 * (1.0 + 3f64.sqrt() / 2.0);
        assert!((m.xor_zero_probability(Basis::PauliX, phi) - expected_x).abs() < 1e-12);
        assert!((m.xor_zero_probability(Basis::PauliY, 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pooled_mle_examples() {
        let m = ProbabilityModel::ideal_singlet();
        let n = 1_000_000u64;
        let qy = m.xor_zero_probability(Basis::PauliY, FRAC_PI_3);
        let qx = m.xor_zero_probability(Basis::PauliX, FRAC_PI_3);
        let s = XorSummary {
            y: BernoulliCount { zeros: (qy * n as f64).round() as u64, total: n },
            x: BernoulliCount { zeros: (qx * n as f64).round() as u64, total: n },
        };
        let est = pooled_mle(&s, &m, DEFAULT_GRID_STEP).unwrap();
        assert!((est.phi - FRAC_PI_3).abs() < 1e-5);
        assert!(!est.low_curvature);

        let y_only = XorSummary { y: BernoulliCount { zeros: 500, total: 500 }, x: BernoulliCount::default() };
        let est = pooled_mle(&y_only, &m, DEFAULT_GRID_STEP).unwrap();
        assert!(est.phi.abs() < 1e-9);
        assert!(est.low_curvature);

        assert!(matches!(pooled_mle(&XorSummary::default(), &m, 1e-3), Err(Error::NoData)));
    }

    #[test]
    fn three_point_examples() {
        let phi = [0.1, 0.3, 0.5];
        let p = phi.map(|x| 2.0 - 0.5 * x);
        assert!((three_point_slope(p, phi).unwrap() + 0.5).abs() < 1e-14);

        let phi = [0.1 * PI, 0.2 * PI, 0.3 * PI];
        let p = phi.map(|x| 0.5 * (1.0 + x.cos()));
        let slope = three_point_slope(p, phi).unwrap();
        let dphi: f64 = 0.1 * PI;
        assert!((slope + (0.2 * PI).sin() / 2.0).abs() <= dphi * dphi / 6.0 * 0.5 + 1e-15);

        let eps = 1e-3;
        let noisy = [p[0] - eps, p[1], p[2] + eps];
        let diff = (three_point_slope(noisy, phi).unwrap() - slope).abs();
        assert!(diff <= eps / dphi + 1e-15);

        assert!(matches!(three_point_slope(p, [0.1, 0.1, 0.2]), Err(Error::CoincidentPhases(_))));
    }

    #[test]
    fn cfi_examples() {
        assert!((cfi(0.5, 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cfi(0.3, 0.0).unwrap(), 0.0);
        for phi in [0.2, 1.0, 2.9] {
            let p = 0.5 * (1.0 + f64::cos(phi));
            assert!((cfi(p, -phi.sin() / 2.0).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!(matches!(cfi(1.0, 0.0), Err(Error::BoundaryProbability { .. })));
        assert!(matches!(cfi(0.0, 0.1), Err(Error::BoundaryProbability { .. })));
    }

    #[test]
    fn classify_on_simulated_run() {
        let n = 100_000;
        let t = run_protocol(&SourceConfig::ideal(2024), FRAC_PI_3, n).unwrap();
        let g = classify(&t.rounds).unwrap();
        assert_eq!(g.iter().map(|s| s.total()).sum::<u64>(), n as u64);
        let a1 = &g[0];
        let sigma = (0.75 * 0.25 / a1.total() as f64).sqrt();
        assert!((a1.p_exp() - 0.75).abs() < 3.0 * sigma);
        let size_sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for s in &g {
            assert!((s.total() as f64 - n as f64 / 4.0).abs() < 4.0 * size_sigma);
        }
    }

    #[test]
    fn xor_and_group_estimates_agree() {
        let n = 100_000;
        let phi = FRAC_PI_4;
        let t = run_protocol(&SourceConfig::ideal(99), phi, n).unwrap();
        let m = ProbabilityModel::ideal_singlet();
        let groups = classify(&t.rounds).unwrap();
        let xor = xor_decode(&t.rounds).unwrap();
        let est = estimate_phase(&m, &groups, &xor, DEFAULT_GRID_STEP).unwrap();
        // Both invert the same model; each has σ ≈ 1/√(n F) with F = 1.
        let tol = 4.0 * (2.0 / (n as f64 / 4.0)).sqrt();
        for (_, g) in est.per_group {
            assert!((g - est.pooled_xor).abs() < tol, "{est:?}");
        }
        assert!((est.pooled_weighted - est.pooled_xor).abs() < tol);
        let y_frac = xor.y.fraction();
        assert!((y_frac - 0.5 * (1.0 + phi.cos())).abs() < 4.0 * (0.25 / xor.y.total as f64).sqrt());
    }

    #[test]
    fn fallback_substitutes_neighbour() {
        // Centre at P = 1 exactly, neighbours interior.
        let pts = [
            CurvePoint { phi: 0.0, n0: 90, n1: 10 },
            CurvePoint { phi: 0.1, n0: 95, n1: 5 },
            CurvePoint { phi: 0.2, n0: 100, n1: 0 },
            CurvePoint { phi: 0.3, n0: 97, n1: 3 },
            CurvePoint { phi: 0.4, n0: 92, n1: 8 },
        ];
        let direct = three_point_cfi(Series::Bob, &pts, 2).unwrap();
        assert!(direct.fisher.is_none());
        let sub = three_point_cfi_with_fallback(Series::Bob, &pts, 2).unwrap();
        assert_eq!(sub.substituted_from, Some(1));
        assert_eq!(sub.center_index, 2);
        assert!(sub.fisher.is_some());
    }

    #[test]
    fn predicted_eve_cfi_vanishes_for_werner() {
        let phases: Vec<f64> = (0..=10).map(|k| k as f64 * PI / 10.0).collect();
        let m = ProbabilityModel::with_detector(werner(0.99).unwrap(), (1.0, 0.98)).unwrap();
        let pred = predicted_cfi(&m, &phases, 2, 100_000).unwrap();
        assert!(pred.eve_exact < 1e-20);
        assert!(pred.alice_max() > 0.9);
        assert!(pred.ratio() > 1e2);
    }
}
