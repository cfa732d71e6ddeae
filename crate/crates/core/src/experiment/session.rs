use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::estimation::{
    classify, eve_report, estimate_phase, predicted_cfi, three_point_cfi_with_fallback, xor_decode, CfiReport,
    CurvePoint, DerivativeMethod, EveReport, GroupStats, PhaseEstimate, PredictedCfi, ProbabilityModel, Series,
    XorSummary,
};
use crate::protocol::{run_protocol, EveView, GroupLabel, RoundRecord};
use crate::qcore::DensityMatrix;
use crate::source::ideal_singlet;
use crate::tomography::{reconstruct, simulate_counts, TomographyCounts};
use crate::transport::{
    decode_prefix, encode, memory_channel, parse_tap, FrameSink, FrameSource, Message, Tap, TransportError,
};

/// Alice's knowledge of the shared state.
#[derive(Clone, Debug)]
pub struct Calibration {
    pub rho_hat: DensityMatrix,
    /// Absent when calibration was skipped in favour of the ideal singlet.
    pub counts: Option<TomographyCounts>,
    pub fidelity: Option<f64>,
}

impl Calibration {
    pub fn ideal() -> Self {
        Self { rho_hat: ideal_singlet(), counts: None, fidelity: None }
    }

    /// Reconstructs from counts and enforces the abort threshold.
    pub fn from_counts(counts: TomographyCounts, abort_threshold: f64) -> Result<Self> {
        let r = reconstruct(&counts)?;
        if r.fidelity_to_singlet < abort_threshold {
            return Err(Error::CalibrationAbort { fidelity: r.fidelity_to_singlet, threshold: abort_threshold });
        }
        Ok(Self { rho_hat: r.rho_hat, counts: Some(counts), fidelity: Some(r.fidelity_to_singlet) })
    }
}

/// Bob's tomography counts for this configuration.
pub fn simulate_tomography(cfg: &ExperimentConfig) -> Result<TomographyCounts> {
    simulate_counts(&cfg.source().shared_state()?, cfg.shots, cfg.seed)
}

/// Tomography on its own, as run by the `tomography` command.
pub fn calibrate_locally(cfg: &ExperimentConfig) -> Result<(TomographyCounts, Result<Calibration>)> {
    cfg.validate()?;
    let counts = simulate_tomography(cfg)?;
    let cal = Calibration::from_counts(counts.clone(), cfg.abort_threshold);
    Ok((counts, cal))
}

#[derive(Clone, Debug, Default)]
pub struct BobOptions {
    /// Counts from the calibration run, reported to Alice before sensing.
    /// Required unless calibration is skipped.
    pub tomography: Option<TomographyCounts>,
    /// First phase point to send, unless the progress file says otherwise.
    pub resume_from: u16,
    /// Stop right after sending this phase point, as if the station died.
    pub stop_after: Option<u16>,
    /// Where Bob records the last phase point he finished sending.
    pub progress_file: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BobExit {
    Completed,
    Stopped { last_phase_point: u16 },
}

fn read_progress(path: &Path, hash: u64) -> Option<u16> {
    let text = fs::read_to_string(path).ok()?;
    let mut fields = text.split_whitespace();
    let h = fields.next()?.strip_prefix("config_hash=")?;
    let k = fields.next()?.strip_prefix("last_completed=")?;
    (u64::from_str_radix(h, 16).ok()? == hash).then_some(())?;
    k.parse().ok()
}

fn write_progress(path: &Path, hash: u64, k: u16) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, format!("config_hash={hash:016x} last_completed={k}\n"))?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Bob's station: announces the sweep, reports tomography counts (unless
/// calibration is skipped), then publishes s_B for each phase point.
///
/// After a restart Bob resends from the last phase point recorded in his
/// progress file; the receiver drops duplicates.
pub fn bob_session<S: FrameSink + ?Sized>(cfg: &ExperimentConfig, sink: &mut S, opts: &BobOptions) -> Result<BobExit> {
    cfg.validate()?;
    let tomography = match (&opts.tomography, cfg.ideal_calibration) {
        (_, true) => None,
        (Some(c), false) => Some(c),
        (None, false) => return Err(Error::Config("missing tomography counts; run the calibration first".into())),
    };
    let hash = cfg.hash();
    sink.send(&Message::SweepManifest {
        phase_count: cfg.phases.len() as u16,
        rounds_per_phase: cfg.rounds,
        config_hash: hash,
    })?;
    if let Some(counts) = tomography {
        sink.send(&Message::TomographyReport(counts.clone()))?;
    }
    let start = match opts.progress_file.as_deref().and_then(|p| read_progress(p, hash)) {
        Some(done) => done.max(opts.resume_from),
        None => opts.resume_from,
    };
    let source = cfg.source();
    for (k, &phi) in cfg.phases.iter().enumerate().skip(start as usize) {
        let k = k as u16;
        let transcript = run_protocol(&source, phi, cfg.rounds as usize)?;
        sink.send(&Message::SensingOutcomes { phase_point_id: k, bits: transcript.s_b_bits() })?;
        if let Some(p) = &opts.progress_file {
            write_progress(p, hash, k)?;
        }
        if opts.stop_after == Some(k) {
            return Ok(BobExit::Stopped { last_phase_point: k });
        }
    }
    if let Some(p) = &opts.progress_file {
        let _ = fs::remove_file(p);
    }
    Ok(BobExit::Completed)
}

/// Alice's station: collects Bob's frames, spooling them so an interrupted
/// sweep can pick up where it stopped, then runs the analysis.
pub struct AliceStation {
    cfg: ExperimentConfig,
    calibration: Option<Calibration>,
    manifest_seen: bool,
    received: BTreeMap<u16, Vec<u8>>,
    spool: Option<PathBuf>,
}

impl AliceStation {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, calibration: None, manifest_seen: false, received: BTreeMap::new(), spool: None })
    }

    /// Uses `path` as the spool, first replaying whatever it already holds.
    /// A partially written final frame is discarded.
    pub fn with_spool(mut self, path: PathBuf) -> Result<Self> {
        if let Ok(bytes) = fs::read(&path) {
            let mut rest = &bytes[..];
            let mut good = 0;
            while !rest.is_empty() {
                match decode_prefix(rest) {
                    Ok((msg, used)) => {
                        self.handle(msg)?;
                        rest = &rest[used..];
                        good += used;
                    }
                    Err(TransportError::Truncated { .. }) => break,
                    Err(e) => return Err(e.into()),
                }
            }
            if good < bytes.len() {
                fs::write(&path, &bytes[..good])?;
            }
        }
        self.spool = Some(path);
        Ok(self)
    }

    fn append_spool(&self, msg: &Message) -> Result<()> {
        if let Some(p) = &self.spool {
            let mut f = fs::OpenOptions::new().create(true).append(true).open(p)?;
            f.write_all(&encode(msg)?)?;
            f.sync_data()?;
        }
        Ok(())
    }

    pub fn handle(&mut self, msg: Message) -> Result<()> {
        let n = self.cfg.phases.len();
        match &msg {
            Message::SweepManifest { phase_count, rounds_per_phase, config_hash } => {
                if *config_hash != self.cfg.hash() || *phase_count as usize != n || *rounds_per_phase != self.cfg.rounds {
                    return Err(Error::Config(format!(
                        "peer runs configuration {config_hash:016x}, expected {:016x}",
                        self.cfg.hash()
                    )));
                }
                if !self.manifest_seen {
                    self.manifest_seen = true;
                    self.append_spool(&msg)?;
                }
            }
            Message::TomographyReport(counts) => {
                if self.cfg.ideal_calibration {
                    return Err(Error::Config("tomography report received but calibration is disabled".into()));
                }
                match &self.calibration {
                    Some(c) if c.counts.as_ref() == Some(counts) => {}
                    Some(_) => return Err(Error::Config("tomography report changed between connections".into())),
                    None => {
                        self.calibration = Some(Calibration::from_counts(counts.clone(), self.cfg.abort_threshold)?);
                        self.append_spool(&msg)?;
                    }
                }
            }
            Message::SensingOutcomes { phase_point_id, bits } => {
                if !self.manifest_seen {
                    return Err(TransportError::Malformed("sensing outcomes before sweep manifest".into()).into());
                }
                if *phase_point_id as usize >= n || bits.len() != self.cfg.rounds as usize {
                    return Err(TransportError::Malformed(format!(
                        "phase point {phase_point_id} with {} rounds does not fit the manifest",
                        bits.len()
                    ))
                    .into());
                }
                match self.received.get(phase_point_id) {
                    Some(prev) if prev == bits => {}
                    Some(_) => {
                        return Err(TransportError::Malformed(format!(
                            "phase point {phase_point_id} resent with different outcomes"
                        ))
                        .into())
                    }
                    None => {
                        self.append_spool(&msg)?;
                        if let Message::SensingOutcomes { phase_point_id, bits } = msg {
                            self.received.insert(phase_point_id, bits);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.received.len() == self.cfg.phases.len()
            && (self.cfg.ideal_calibration || self.calibration.is_some())
    }

    pub fn last_phase_point(&self) -> Option<u16> {
        self.received.keys().next_back().copied()
    }

    /// Drains `source` until Bob closes the link. A link that ends early,
    /// cleanly or not, is reported as a lost connection.
    pub fn receive<S: FrameSource + ?Sized>(&mut self, source: &mut S) -> Result<()> {
        loop {
            match source.recv() {
                Ok(Some(msg)) => self.handle(msg)?,
                Ok(None) if self.is_complete() => return Ok(()),
                Ok(None) | Err(TransportError::Truncated { .. }) | Err(TransportError::Io(_)) => {
                    return Err(TransportError::ConnectionLost { last_phase_point: self.last_phase_point() }.into())
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub fn finish(self) -> Result<SweepOutcome> {
        if !self.is_complete() {
            return Err(TransportError::ConnectionLost { last_phase_point: self.last_phase_point() }.into());
        }
        let calibration = match self.calibration {
            Some(c) => c,
            None => Calibration::ideal(),
        };
        let bits: Vec<Vec<u8>> = self.received.into_values().collect();
        let out = analyze(&self.cfg, calibration, &bits)?;
        if let Some(p) = &self.spool {
            let _ = fs::remove_file(p);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PhasePoint {
    pub phi: f64,
    pub groups: [GroupStats; 4],
    pub xor: XorSummary,
    /// Bob's unclassified (N_B0, N_B1).
    pub bob_counts: (u64, u64),
    /// Model P(s_B = 0) for each group at the true phase.
    pub p_model: [f64; 4],
    pub estimate: PhaseEstimate,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub config: ExperimentConfig,
    pub calibration: Calibration,
    pub points: Vec<PhasePoint>,
    pub eve_views: Vec<EveView>,
    pub cfi: Vec<CfiReport>,
    pub eve: EveReport,
    /// Closed-form expectations from the true source parameters.
    pub predicted: Vec<PredictedCfi>,
}

/// Alice's post-processing of one full sweep.
///
/// Alice's secrets are regenerated from the shared seed: the simulation
/// stands in for the pairs and coincidence records both stations hold, and
/// only (basis, s_A) is taken from the replay. s_B comes from `bits`.
pub fn analyze(cfg: &ExperimentConfig, calibration: Calibration, bits: &[Vec<u8>]) -> Result<SweepOutcome> {
    cfg.validate()?;
    if bits.len() != cfg.phases.len() {
        return Err(Error::InvalidParameter(format!("{} phase points of outcomes for {}", bits.len(), cfg.phases.len())));
    }
    let model = ProbabilityModel::new(calibration.rho_hat.clone())?;
    let source = cfg.source();
    let mut points = Vec::with_capacity(bits.len());
    let mut eve_views = Vec::with_capacity(bits.len());
    for (&phi, bob_bits) in cfg.phases.iter().zip(bits) {
        let replay = run_protocol(&source, phi, cfg.rounds as usize)?;
        if replay.rounds.len() != bob_bits.len() {
            return Err(Error::InvalidParameter("outcome count differs from round count".into()));
        }
        let records: Vec<RoundRecord> =
            replay.rounds.iter().zip(bob_bits).map(|(r, &s_b)| RoundRecord { s_b, ..*r }).collect();
        let groups = classify(&records)?;
        let xor = xor_decode(&records)?;
        let estimate = estimate_phase(&model, &groups, &xor, cfg.grid_step)?;
        let view = EveView::from_bits(bob_bits);
        points.push(PhasePoint {
            phi,
            groups,
            xor,
            bob_counts: view.counts(),
            p_model: GroupLabel::ALL.map(|l| model.curve(l).probability(phi)),
            estimate,
        });
        eve_views.push(view);
    }

    let centering = cfg.effective_centering();
    let estimates: Vec<PhaseEstimate> = points.iter().map(|p| p.estimate).collect();
    let eve = eve_report(&eve_views, &estimates, &model, &centering)?;
    let truth = ProbabilityModel::with_detector(source.shared_state()?, cfg.noise.detector())?;
    let mut cfi = Vec::with_capacity(centering.len());
    let mut predicted = Vec::with_capacity(centering.len());
    for (i, &c) in centering.iter().enumerate() {
        let mut per_group = Vec::with_capacity(4);
        for label in GroupLabel::ALL {
            let curve: Vec<CurvePoint> = points
                .iter()
                .map(|p| {
                    let g = &p.groups[label.index()];
                    CurvePoint { phi: p.phi, n0: g.n0, n1: g.n1 }
                })
                .collect();
            per_group.push(three_point_cfi_with_fallback(Series::Group(label), &curve, c)?);
        }
        let eve_entry = eve.cfi[i];
        let mut report = CfiReport {
            center_index: c,
            per_group: per_group.try_into().unwrap(),
            eve: eve_entry,
            asymmetry_ratio: 0.0,
            derivative_method: DerivativeMethod::ThreePoint,
        };
        report.asymmetry_ratio =
            crate::estimation::asymmetry_ratio(report.alice_max(), report.eve_f(), eve_entry.floor);
        cfi.push(report);
        predicted.push(predicted_cfi(&truth, &cfg.phases, c, cfg.rounds as u64)?);
    }

    Ok(SweepOutcome { config: cfg.clone(), calibration, points, eve_views, cfi, eve, predicted })
}

/// Runs both stations in one process over an in-memory link. With `tap`,
/// also returns every byte that crossed the link.
pub fn run_sweep_local(
    cfg: &ExperimentConfig,
    tomography: Option<TomographyCounts>,
    tap: bool,
) -> Result<(SweepOutcome, Option<Vec<u8>>)> {
    let opts = BobOptions { tomography, ..BobOptions::default() };
    let mut alice = AliceStation::new(cfg.clone())?;
    let (sink, mut source) = memory_channel(4);
    let (mut sink, log): (Box<dyn FrameSink + Send>, _) = if tap {
        let t = Tap::new(sink);
        let log = t.log();
        (Box::new(t), Some(log))
    } else {
        (Box::new(sink), None)
    };
    let (bob, received) = std::thread::scope(|s| {
        let bob = s.spawn(move || bob_session(cfg, &mut sink, &opts));
        let received = alice.receive(&mut source);
        // Unblock Bob if Alice stopped early.
        drop(source);
        (bob.join().expect("Bob's station panicked"), received)
    });
    match (received, bob) {
        (Ok(()), _) => {}
        // A link that died under Alice is explained by Bob's failure.
        (Err(Error::Transport(TransportError::ConnectionLost { .. })), Err(bob_err)) => return Err(bob_err),
        (Err(e), _) => return Err(e),
    }
    let outcome = alice.finish()?;
    let bytes = log.map(|l| l.lock().expect("tap log poisoned").clone());
    Ok((outcome, bytes))
}

/// Eve's report rebuilt from nothing but tapped link bytes, laid against
/// Alice's published phase axis.
pub fn tap_report(out: &SweepOutcome, bytes: &[u8]) -> Result<EveReport> {
    let mut tapped = parse_tap(bytes)?;
    tapped.sort_by_key(|t| t.phase_point_id);
    tapped.dedup_by_key(|t| t.phase_point_id);
    let views: Vec<EveView> = tapped.into_iter().map(|t| t.view).collect();
    let estimates: Vec<PhaseEstimate> = out.points.iter().map(|p| p.estimate).collect();
    let model = ProbabilityModel::new(out.calibration.rho_hat.clone())?;
    eve_report(&views, &estimates, &model, &out.config.effective_centering())
}
