use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::session::{PhasePoint, SweepOutcome};
use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::estimation::{
    asymmetry_ratio, three_point_cfi_with_fallback, CfiEntry, CfiReport, CurvePoint, DerivativeMethod, EveReport,
    PredictedCfi, Series,
};
use crate::protocol::GroupLabel;
use crate::qcore::{CMatrix, DensityMatrix, C64};
use crate::tomography::TomographyCounts;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), reason: reason.into() }
}

/// Data lines of a CSV file after its column header, with the header checked.
fn csv_rows(path: &Path, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let f = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if line != header {
                return Err(format_err(path, format!("expected header {header:?}, found {line:?}")));
            }
            seen_header = true;
            continue;
        }
        let cols: Vec<String> = line.split(',').map(str::to_string).collect();
        if cols.len() != header.split(',').count() {
            return Err(format_err(path, format!("line {}: wrong column count", i + 1)));
        }
        rows.push((i + 1, cols));
    }
    if !seen_header {
        return Err(format_err(path, "missing header"));
    }
    Ok(rows)
}

fn parse_col<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| format_err(path, format!("line {line}: cannot parse {s:?}")))
}

pub fn write_tomography(dir: &Path, cfg: &ExperimentConfig, counts: &TomographyCounts) -> Result<()> {
    let mut w = create(&dir.join("tomography_counts.csv"))?;
    counts.write_csv(&mut w, &cfg.header_line())?;
    w.flush()?;
    Ok(())
}

/// Four rows of `re im` pairs, full precision.
pub fn write_rho_hat(path: &Path, cfg: &ExperimentConfig, rho: &DensityMatrix) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", cfg.header_line())?;
    let m = rho.matrix();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{} {}", m[(r, c)].re, m[(r, c)].im)).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rho_hat(path: &Path) -> Result<DensityMatrix> {
    let text = fs::read_to_string(path)?;
    let mut vals = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
        for tok in line.split_whitespace() {
            vals.push(parse_col::<f64>(path, 0, tok)?);
        }
    }
    if vals.len() != 32 {
        return Err(format_err(path, format!("expected 32 numbers, found {}", vals.len())));
    }
    let m = CMatrix::from_fn(4, 4, |r, c| C64::new(vals[8 * r + 2 * c], vals[8 * r + 2 * c + 1]));
    DensityMatrix::new(m)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub phi: f64,
    pub series: Series,
    pub n0: u64,
    pub n1: u64,
    pub p_exp: f64,
    pub p_model: f64,
}

const SWEEP_HEADER: &str = "phi_k,group,n0,n1,p_exp,p_model";

pub fn write_sweep_csv(path: &Path, cfg: &ExperimentConfig, points: &[PhasePoint]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", cfg.header_line())?;
    writeln!(w, "{SWEEP_HEADER}")?;
    for p in points {
        for (g, model) in p.groups.iter().zip(p.p_model) {
            writeln!(w, "{},{},{},{},{},{}", p.phi, g.label, g.n0, g.n1, g.p_exp(), model)?;
        }
        let (n0, n1) = p.bob_counts;
        let eve_model = p.p_model.iter().sum::<f64>() / 4.0;
        writeln!(w, "{},B,{},{},{},{}", p.phi, n0, n1, n0 as f64 / (n0 + n1) as f64, eve_model)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    csv_rows(path, SWEEP_HEADER)?
        .into_iter()
        .map(|(line, c)| {
            Ok(SweepRow {
                phi: parse_col(path, line, &c[0])?,
                series: Series::parse(&c[1]).ok_or_else(|| format_err(path, format!("line {line}: series {:?}", c[1])))?,
                n0: parse_col(path, line, &c[2])?,
                n1: parse_col(path, line, &c[3])?,
                p_exp: parse_col(path, line, &c[4])?,
                p_model: parse_col(path, line, &c[5])?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimateRow {
    pub phi: f64,
    pub per_group: [f64; 4],
    pub pooled_xor: f64,
    pub pooled_weighted: f64,
    pub grid_resolution: f64,
    pub low_curvature: bool,
}

const ESTIMATES_HEADER: &str =
    "phi_k,phi_hat_A1,phi_hat_A2,phi_hat_A3,phi_hat_A4,phi_hat_pooled_xor,phi_hat_pooled_weighted,grid_resolution,low_curvature";

pub fn write_estimates_csv(path: &Path, cfg: &ExperimentConfig, points: &[PhasePoint]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", cfg.header_line())?;
    writeln!(w, "{ESTIMATES_HEADER}")?;
    for p in points {
        let e = &p.estimate;
        let g = e.per_group.map(|(_, phi)| phi);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            p.phi, g[0], g[1], g[2], g[3], e.pooled_xor, e.pooled_weighted, e.grid_resolution, e.low_curvature
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_estimates_csv(path: &Path) -> Result<Vec<EstimateRow>> {
    csv_rows(path, ESTIMATES_HEADER)?
        .into_iter()
        .map(|(line, c)| {
            let f = |i: usize| parse_col::<f64>(path, line, &c[i]);
            Ok(EstimateRow {
                phi: f(0)?,
                per_group: [f(1)?, f(2)?, f(3)?, f(4)?],
                pooled_xor: f(5)?,
                pooled_weighted: f(6)?,
                grid_resolution: f(7)?,
                low_curvature: parse_col(path, line, &c[8])?,
            })
        })
        .collect()
}

const CFI_HEADER: &str = "center_index,phase,series,P,slope,F,floor,substituted_from";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_cfi_csv(path: &Path, header: &str, reports: &[CfiReport]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{header}")?;
    writeln!(w, "{CFI_HEADER}")?;
    for r in reports {
        for e in r.per_group.iter().chain(std::iter::once(&r.eve)) {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                e.center_index,
                e.phase,
                e.series.name(),
                e.p,
                e.slope,
                opt(e.fisher),
                e.floor,
                opt(e.substituted_from)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds the three-point CFI table from saved sweep and estimate tables.
/// Eve's phase axis is the mean of Alice's four per-group estimates.
pub fn cfi_from_tables(sweep: &[SweepRow], estimates: &[EstimateRow], centering: &[usize]) -> Result<Vec<CfiReport>> {
    let curve = |series: Series, use_estimates: bool| -> Result<Vec<CurvePoint>> {
        let rows: Vec<&SweepRow> = sweep.iter().filter(|r| r.series == series).collect();
        if rows.len() != estimates.len() {
            return Err(Error::InvalidParameter(format!(
                "{} rows for {} but {} estimate rows",
                rows.len(),
                series.name(),
                estimates.len()
            )));
        }
        Ok(rows
            .iter()
            .zip(estimates)
            .map(|(r, e)| CurvePoint {
                phi: if use_estimates { e.per_group.iter().sum::<f64>() / 4.0 } else { r.phi },
                n0: r.n0,
                n1: r.n1,
            })
            .collect())
    };
    let groups: Vec<Vec<CurvePoint>> =
        GroupLabel::ALL.iter().map(|&l| curve(Series::Group(l), false)).collect::<Result<_>>()?;
    let bob = curve(Series::Bob, true)?;
    centering
        .iter()
        .map(|&c| {
            let per_group: Vec<CfiEntry> = GroupLabel::ALL
                .iter()
                .zip(&groups)
                .map(|(&l, pts)| three_point_cfi_with_fallback(Series::Group(l), pts, c))
                .collect::<Result<_>>()?;
            let eve = three_point_cfi_with_fallback(Series::Bob, &bob, c)?;
            let mut r = CfiReport {
                center_index: c,
                per_group: per_group.try_into().unwrap(),
                eve,
                asymmetry_ratio: 0.0,
                derivative_method: DerivativeMethod::ThreePoint,
            };
            r.asymmetry_ratio = asymmetry_ratio(r.alice_max(), r.eve_f(), eve.floor);
            Ok(r)
        })
        .collect()
}

#[derive(Serialize)]
struct CalibrationJson<'a> {
    fidelity_to_singlet: Option<f64>,
    tomography_counts: Option<&'a TomographyCounts>,
    rho_hat: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    header: String,
    config_hash: String,
    config: &'a ExperimentConfig,
    calibration: CalibrationJson<'a>,
    points: &'a [PhasePoint],
    cfi: &'a [CfiReport],
    eve: &'a EveReport,
    predicted: &'a [PredictedCfi],
}

fn matrix_rows(rho: &DensityMatrix) -> Vec<Vec<[f64; 2]>> {
    let m = rho.matrix();
    (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect()).collect()
}

/// Writes every per-sweep file into `dir`.
pub fn write_outputs(dir: &Path, out: &SweepOutcome) -> Result<()> {
    let cfg = &out.config;
    let header = cfg.header_line();
    fs::create_dir_all(dir)?;
    if let Some(counts) = &out.calibration.counts {
        write_tomography(dir, cfg, counts)?;
        write_rho_hat(&dir.join("rho_hat.txt"), cfg, &out.calibration.rho_hat)?;
    }
    write_sweep_csv(&dir.join("sweep.csv"), cfg, &out.points)?;
    write_estimates_csv(&dir.join("estimates.csv"), cfg, &out.points)?;
    write_cfi_csv(&dir.join("cfi.csv"), &header, &out.cfi)?;
    let report = ReportJson {
        header: header.clone(),
        config_hash: format!("{:016x}", cfg.hash()),
        config: cfg,
        calibration: CalibrationJson {
            fidelity_to_singlet: out.calibration.fidelity,
            tomography_counts: out.calibration.counts.as_ref(),
            rho_hat: matrix_rows(&out.calibration.rho_hat),
        },
        points: &out.points,
        cfi: &out.cfi,
        eve: &out.eve,
        predicted: &out.predicted,
    };
    let mut w = create(&dir.join("report.json"))?;
    serde_json::to_writer_pretty(&mut w, &report).map_err(std::io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EveReportJson<'a> {
    header: String,
    #[serde(flatten)]
    report: &'a EveReport,
}

pub fn write_eve_report(path: &Path, cfg: &ExperimentConfig, report: &EveReport) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &EveReportJson { header: cfg.header_line(), report })
        .map_err(std::io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
