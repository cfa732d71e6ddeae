use std::fs;
use std::io::BufRead;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use sqrs_core::experiment::{
    bob_session, calibrate_locally, cfi_from_tables, read_estimates_csv, read_sweep_csv, run_sweep_local, tap_report,
    write_cfi_csv, write_eve_report, write_outputs, write_rho_hat, write_tomography, AliceStation, BobExit,
    BobOptions, ExperimentConfig, SweepOutcome,
};
use sqrs_core::tomography::TomographyCounts;
use sqrs_core::transport::{StreamSink, StreamSource, Tap, TransportError};
use sqrs_core::Error;

#[derive(Parser)]
#[command(name = "sqrs", version, about = "Secure quantum remote sensing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and reconstruct the shared-state tomography.
    Tomography(Common),
    /// Run a full phase sweep with both stations in this process.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Record every byte on the link to this file and write Eve's report.
        #[arg(long)]
        eve_tap: Option<PathBuf>,
    },
    /// Recompute the CFI table from a finished sweep's output files.
    Cfi {
        /// Directory holding sweep.csv and estimates.csv.
        #[arg(long = "in", default_value = "out")]
        input: PathBuf,
        /// Where to write cfi.csv (defaults to the input directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [2usize, 7])]
        centering: Vec<usize>,
    },
    /// Run Bob's station: listen on --endpoint and stream outcomes to Alice.
    ServeBob {
        #[command(flatten)]
        common: Common,
        /// Skip phase points before this one.
        #[arg(long, default_value_t = 0)]
        resume_from: u16,
        /// Record every byte Bob sends to this file.
        #[arg(long)]
        eve_tap: Option<PathBuf>,
        /// Exit abruptly after sending this phase point (fault injection).
        #[arg(long, hide = true)]
        stop_after: Option<u16>,
    },
    /// Run Alice's station: connect to Bob at --endpoint and analyze.
    RunAlice {
        #[command(flatten)]
        common: Common,
        /// Seconds to keep trying to (re)connect to Bob.
        #[arg(long, default_value_t = 30)]
        connect_timeout: u64,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Flat key = value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated phase set points in radians.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    phases: Option<Vec<f64>>,
    /// Detected rounds per phase point.
    #[arg(long)]
    rounds: Option<u32>,
    /// Tomography shots per setting.
    #[arg(long)]
    shots: Option<u32>,
    #[arg(long)]
    werner_p: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    eta0: Option<f64>,
    #[arg(long)]
    eta1: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grid_step: Option<f64>,
    /// Skip tomography; Alice models the ideal singlet.
    #[arg(long)]
    ideal: bool,
    #[arg(long, value_delimiter = ',')]
    centering: Option<Vec<usize>>,
    #[arg(long)]
    abort_threshold: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// host:port of Bob's station.
    #[arg(long)]
    endpoint: Option<String>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            cfg.apply_file_text(&text)?;
        }
        if let Some(v) = &self.phases {
            cfg.phases = v.clone();
        }
        macro_rules! take {
            ($($field:ident => $target:expr),*) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        take!(
            rounds => cfg.rounds,
            shots => cfg.shots,
            werner_p => cfg.noise.werner_p,
            gamma => cfg.noise.dephasing_gamma,
            eta0 => cfg.noise.detector_eta0,
            eta1 => cfg.noise.detector_eta1,
            seed => cfg.seed,
            grid_step => cfg.grid_step,
            abort_threshold => cfg.abort_threshold,
            out => cfg.output_dir
        );
        if self.ideal {
            cfg.ideal_calibration = true;
        }
        if let Some(c) = &self.centering {
            cfg.centering = Some(c.clone());
        }
        if let Some(e) = &self.endpoint {
            cfg.endpoint = Some(e.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) => 2,
        Error::CalibrationAbort { .. } => 3,
        Error::Transport(_) => 4,
        _ => 1,
    }
}

fn endpoint(cfg: &ExperimentConfig) -> Result<&str, Error> {
    cfg.endpoint.as_deref().ok_or_else(|| Error::Config("--endpoint is required".into()))
}

/// Counts from a previous `tomography` run in `dir`, unless calibration is
/// skipped.
fn load_tomography(cfg: &ExperimentConfig, dir: &Path) -> Result<Option<TomographyCounts>, Error> {
    if cfg.ideal_calibration {
        return Ok(None);
    }
    let path = dir.join("tomography_counts.csv");
    let file = fs::File::open(&path).map_err(|_| {
        Error::Config(format!("missing tomography output {}; run `sqrs tomography` first or pass --ideal", path.display()))
    })?;
    Ok(Some(TomographyCounts::read_csv(std::io::BufReader::new(file))?))
}

fn print_summary(out: &SweepOutcome) {
    if let Some(f) = out.calibration.fidelity {
        println!("calibration fidelity to singlet: {f:.6}");
    }
    println!("{:>10} {:>10} {:>10} {:>10} {:>10} {:>10}", "phi", "A1", "A2", "A3", "A4", "pooled");
    for p in &out.points {
        let g = p.estimate.per_group.map(|(_, x)| x);
        println!(
            "{:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            p.phi, g[0], g[1], g[2], g[3], p.estimate.pooled_xor
        );
    }
    for r in &out.cfi {
        let f = r.per_group_f();
        println!(
            "CFI at phase point {}: A1..A4 = {:.4} {:.4} {:.4} {:.4}, Eve = {:.3e}, ratio = {:.3e}",
            r.center_index,
            f[0],
            f[1],
            f[2],
            f[3],
            r.eve_f(),
            r.asymmetry_ratio
        );
    }
}

fn cmd_tomography(common: &Common) -> Result<(), Error> {
    let cfg = common.config()?;
    let (counts, calibration) = calibrate_locally(&cfg)?;
    write_tomography(&cfg.output_dir, &cfg, &counts)?;
    let cal = calibration?;
    write_rho_hat(&cfg.output_dir.join("rho_hat.txt"), &cfg, &cal.rho_hat)?;
    println!("fidelity to singlet: {:.6}", cal.fidelity.unwrap_or(f64::NAN));
    Ok(())
}

fn cmd_sweep(common: &Common, eve_tap: Option<&Path>) -> Result<(), Error> {
    let cfg = common.config()?;
    let counts = load_tomography(&cfg, &cfg.output_dir)?;
    let (out, tap) = run_sweep_local(&cfg, counts, eve_tap.is_some())?;
    write_outputs(&cfg.output_dir, &out)?;
    if let (Some(path), Some(bytes)) = (eve_tap, tap) {
        fs::write(path, &bytes)?;
        write_eve_report(&cfg.output_dir.join("eve_report.json"), &cfg, &tap_report(&out, &bytes)?)?;
    }
    print_summary(&out);
    Ok(())
}

fn cmd_cfi(input: &Path, out: Option<&Path>, centering: &[usize]) -> Result<(), Error> {
    let sweep_path = input.join("sweep.csv");
    let header = fs::File::open(&sweep_path)
        .map(std::io::BufReader::new)?
        .lines()
        .next()
        .transpose()?
        .filter(|l| l.starts_with('#'))
        .unwrap_or_else(|| "# sqrs-v1".to_string());
    let sweep = read_sweep_csv(&sweep_path)?;
    let estimates = read_estimates_csv(&input.join("estimates.csv"))?;
    let reports = cfi_from_tables(&sweep, &estimates, centering)?;
    write_cfi_csv(&out.unwrap_or(input).join("cfi.csv"), &header, &reports)?;
    for r in &reports {
        let f = r.per_group_f();
        println!(
            "phase point {}: A1..A4 = {:.4} {:.4} {:.4} {:.4}, Eve = {:.3e}, ratio = {:.3e}",
            r.center_index,
            f[0],
            f[1],
            f[2],
            f[3],
            r.eve_f(),
            r.asymmetry_ratio
        );
    }
    Ok(())
}

fn cmd_serve_bob(common: &Common, resume_from: u16, eve_tap: Option<&Path>, stop_after: Option<u16>) -> Result<(), Error> {
    let cfg = common.config()?;
    let listener = TcpListener::bind(endpoint(&cfg)?).map_err(TransportError::from)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let opts = BobOptions {
        tomography: load_tomography(&cfg, &cfg.output_dir)?,
        resume_from,
        stop_after,
        progress_file: Some(cfg.output_dir.join("bob_progress")),
    };
    let (stream, _) = listener.accept().map_err(TransportError::from)?;
    stream.set_nodelay(true).map_err(TransportError::from)?;
    let mut sink = Tap::new(StreamSink::new(stream));
    let log = sink.log();
    let result = bob_session(&cfg, &mut sink, &opts);
    if let Some(path) = eve_tap {
        fs::write(path, &*log.lock().expect("tap log poisoned"))?;
    }
    match result? {
        BobExit::Completed => Ok(()),
        BobExit::Stopped { last_phase_point } => {
            eprintln!("stopping after phase point {last_phase_point}");
            drop(sink);
            std::process::exit(137);
        }
    }
}

fn connect(addr: &str, deadline: Instant) -> Result<TcpStream, Error> {
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => return Err(TransportError::from(e).into()),
            Err(_) => std::thread::sleep(Duration::from_millis(50)),
        }
    }
}

fn cmd_run_alice(common: &Common, connect_timeout: u64) -> Result<(), Error> {
    let cfg = common.config()?;
    let addr = endpoint(&cfg)?.to_string();
    fs::create_dir_all(&cfg.output_dir)?;
    let mut alice = AliceStation::new(cfg.clone())?.with_spool(cfg.output_dir.join(".alice_spool"))?;
    let window = Duration::from_secs(connect_timeout);
    let mut deadline = Instant::now() + window;
    while !alice.is_complete() {
        let stream = connect(&addr, deadline)?;
        let mut source = StreamSource::new(stream);
        match alice.receive(&mut source) {
            Ok(()) => break,
            Err(Error::Transport(TransportError::ConnectionLost { last_phase_point })) => {
                if Instant::now() >= deadline {
                    return Err(TransportError::ConnectionLost { last_phase_point }.into());
                }
                eprintln!("link to Bob lost after phase point {last_phase_point:?}; reconnecting");
                deadline = Instant::now() + window;
            }
            Err(e) => return Err(e),
        }
    }
    let out = alice.finish()?;
    write_outputs(&cfg.output_dir, &out)?;
    print_summary(&out);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Tomography(c) => cmd_tomography(c),
        Command::Sweep { common, eve_tap } => cmd_sweep(common, eve_tap.as_deref()),
        Command::Cfi { input, out, centering } => cmd_cfi(input, out.as_deref(), centering),
        Command::ServeBob { common, resume_from, eve_tap, stop_after } => {
            cmd_serve_bob(common, *resume_from, eve_tap.as_deref(), *stop_after)
        }
        Command::RunAlice { common, connect_timeout } => cmd_run_alice(common, *connect_timeout),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
