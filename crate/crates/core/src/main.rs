use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use visco2d::dynamics::{simulate, DynamicsError, Observer};
use visco2d::family::{run_family, FamilySpec};
use visco2d::field::Spectral;
use visco2d::flux::{flux_h1_bound_check, DiagnosticsBuilder, DiagnosticsRecorder, RecordSink};
use visco2d::io::{
    read_checkpoint, read_seeds, write_checkpoint, write_trajectory_ndjson, CheckpointError, CsvSink, JsonLine,
    NdjsonSink, OutputFormat, Precision, RunConfig,
};
use visco2d::real::Real;
use visco2d::state::{calibrate_amplitude, preflow_init_on, SimState, StateError};
use visco2d::trajectory::TrajectoryTracer;

#[derive(Parser)]
#[command(name = "visco2d", version, about = "2D viscoelastic pseudo-spectral solver and verification lab")]
struct Cli {
    /// Worker threads (falls back to VISCO2D_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation, writing diagnostics and checkpoints.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run a δ = 1/n family and write the comparison report.
    Family {
        #[arg(long)]
        config: PathBuf,
    },
    /// One-shot flux and constraint report for a checkpoint, on stdout.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
    },
    /// Trace seeds through a run and write their paths.
    Trajectories {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seeds: PathBuf,
    },
}

/// Failure classes, mapped to exit codes 1, 2 and 3.
enum Failure {
    Config(String),
    Diverged(String),
    Artifact(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Diverged(_) => 2,
            Failure::Artifact(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Diverged(m) | Failure::Artifact(m) => m,
        }
    }
}

fn io_fail(what: &Path, e: io::Error) -> Failure {
    Failure::Config(format!("{}: {e}", what.display()))
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
    RunConfig::parse(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn load_state<T: Real>(path: &Path) -> Result<SimState<T>, Failure> {
    let fail = |e: CheckpointError| Failure::Artifact(format!("{}: {e}", path.display()));
    read_checkpoint(path).and_then(|c| c.to_state()).map_err(fail)
}

fn initial_state<T: Real>(cfg: &RunConfig) -> Result<SimState<T>, Failure> {
    let sp = Spectral::<T>::new(cfg.grid);
    let mut init = cfg.init.clone();
    let fail = |e: StateError| Failure::Config(format!("initial data: {e}"));
    if let Some(target) = cfg.target_eps0 {
        init.amplitude = calibrate_amplitude(&init, &sp, target).map_err(fail)?;
        log::info!("calibrated amplitude {} for eps0 = {target}", init.amplitude);
    }
    Ok(preflow_init_on(&init, &sp).map_err(fail)?.with_delta(cfg.delta))
}

fn run_failure<T: Real>(e: DynamicsError<T>, dir: &Path) -> Failure {
    match e {
        DynamicsError::StepDiverged { ref last_good, .. } => {
            let path = dir.join("last_good.vd2d");
            if let Err(w) = write_checkpoint(&path, last_good) {
                log::error!("could not write {}: {w}", path.display());
            }
            Failure::Diverged(e.to_string())
        }
        DynamicsError::DtAboveCeiling { .. } => Failure::Diverged(e.to_string()),
        DynamicsError::InvalidConfig(m) => Failure::Config(m),
        DynamicsError::Sink(err) => Failure::Config(format!("writing outputs: {err}")),
    }
}

/// Fan-out over the configured diagnostics formats.
struct Sinks(Vec<Box<dyn RecordSink>>);

impl RecordSink for Sinks {
    fn write(&mut self, r: &visco2d::flux::DiagnosticsRecord) -> io::Result<()> {
        self.0.iter_mut().try_for_each(|s| s.write(r))
    }

    fn flush(&mut self) -> io::Result<()> {
        self.0.iter_mut().try_for_each(|s| s.flush())
    }
}

fn open_output(path: &Path, append: bool) -> io::Result<BufWriter<File>> {
    let f = if append { OpenOptions::new().create(true).append(true).open(path)? } else { File::create(path)? };
    Ok(BufWriter::new(f))
}

fn cmd_simulate<T: Real>(cfg: &RunConfig, resume: Option<&Path>) -> Result<(), Failure> {
    let s0: SimState<T> = match resume {
        Some(p) => {
            let s = load_state(p)?;
            if s.grid() != cfg.grid {
                return Err(Failure::Config(format!("checkpoint grid {:?} differs from config {:?}", s.grid(), cfg.grid)));
            }
            s
        }
        None => initial_state(cfg)?,
    };
    let dir = &cfg.output.directory;
    fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))?;

    let append = resume.is_some();
    let mut sinks = Sinks(Vec::new());
    for f in &cfg.output.formats {
        let name = match f {
            OutputFormat::Ndjson => "diagnostics.ndjson",
            OutputFormat::Csv => "diagnostics.csv",
        };
        let path = dir.join(name);
        let continuing = append && path.exists();
        let w = open_output(&path, append).map_err(|e| io_fail(&path, e))?;
        sinks.0.push(match f {
            OutputFormat::Ndjson => Box::new(NdjsonSink::new(w)),
            OutputFormat::Csv if continuing => Box::new(CsvSink::continuing(w)),
            OutputFormat::Csv => Box::new(CsvSink::new(w)),
        });
    }

    let dt = cfg.stepper.dt;
    let start = (s0.t / dt).round() as u64;
    let last = (cfg.t_end / dt).round() as u64;
    let cadence = cfg.output.cadence;
    let every = cfg.output.checkpoint_every;
    let mut recorder = DiagnosticsRecorder::with_sink(DiagnosticsBuilder::new(cfg.stepper.mu, cfg.holder), &mut sinks);
    let mut diag = |s: &SimState<T>, step: u64| -> io::Result<()> {
        let first_of_resume = append && step == start;
        if !first_of_resume && (step % cadence == 0 || step == last) {
            recorder.observe(s, step)?;
        }
        Ok(())
    };
    let mut ckpt = |s: &SimState<T>, step: u64| -> io::Result<()> {
        if every > 0 && step != start && step % every == 0 && step != last {
            write_checkpoint(&dir.join(format!("checkpoint_{step:09}.vd2d")), s)?;
        }
        Ok(())
    };
    let result = simulate(&s0, cfg.t_end, &cfg.stepper, 1, &mut [&mut diag, &mut ckpt]);
    sinks.flush().map_err(|e| Failure::Config(format!("writing outputs: {e}")))?;
    let last_state = result.map_err(|e| run_failure(e, dir))?;
    let path = dir.join("final.vd2d");
    write_checkpoint(&path, &last_state).map_err(|e| io_fail(&path, e))
}

fn cmd_family<T: Real>(cfg: &RunConfig) -> Result<(), Failure> {
    let Some(fam) = &cfg.family else {
        return Err(Failure::Config("config has no family section".into()));
    };
    let mut init = cfg.init.clone();
    if let Some(target) = cfg.target_eps0 {
        let sp = Spectral::<T>::new(cfg.grid);
        init.amplitude = calibrate_amplitude(&init, &sp, target).map_err(|e| Failure::Config(e.to_string()))?;
    }
    let spec = FamilySpec {
        n_values: fam.n_values.clone(),
        grid: cfg.grid,
        stepper: cfg.stepper.clone(),
        init,
        compare_times: fam.compare_times.clone(),
        sample_every: fam.sample_every,
    };
    spec.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let dir = &cfg.output.directory;
    fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))?;
    let report = run_family::<T>(&spec, &dir.join("family")).map_err(|e| Failure::Config(e.to_string()))?;
    let path = dir.join("family_report.ndjson");
    let mut w = open_output(&path, false).map_err(|e| io_fail(&path, e))?;
    report.write_ndjson(&mut w).map_err(|e| io_fail(&path, e))
}

fn cmd_diagnose(path: &Path, mu: f64) -> Result<(), Failure> {
    let s: SimState<f64> = load_state(path)?;
    let mut out = io::stdout().lock();
    let emit = |out: &mut io::StdoutLock, line: String| writeln!(out, "{line}").map_err(|e| io_fail(Path::new("stdout"), e));
    if !s.is_finite() {
        let line = JsonLine::new().str("kind", "diagnose").num("t", s.t).boolean("finite", false).int("schema", 1);
        emit(&mut out, line.finish())?;
        return Err(Failure::Artifact(format!("{}: checkpoint holds non-finite values", path.display())));
    }
    let r = DiagnosticsBuilder::new(mu, None).record(&s, 0);
    let h = flux_h1_bound_check(&s, mu);
    let c = r.constraints;
    let line = JsonLine::new()
        .str("kind", "diagnose")
        .num("t", s.t)
        .int("n", s.grid().n() as i64)
        .num("delta", s.delta)
        .num("mu", mu)
        .boolean("finite", r.is_finite())
        .num("energy", r.energy)
        .num("e_linf_sq", r.e_linf_sq)
        .num("div_u_inf", c.div_u_inf)
        .num("div_ft_inf", c.div_ft_inf)
        .num("det_drift_inf", c.det_drift_inf)
        .num("compat_inf", c.compat_inf)
        .num("flux_identity_residual", r.flux.flux_identity)
        .num("projected_div_residual", r.flux.projected_div)
        .num("variant_assembly_residual", r.flux.variant_assembly)
        .num("g_l2", r.g_l2)
        .num("gf_l2", r.gf_l2)
        .num("h1_lhs", h.lhs)
        .num("h1_rhs", h.rhs)
        .opt("h1_ratio", h.ratio)
        .num("delta_correction", h.delta_correction)
        .int("schema", 1);
    emit(&mut out, line.finish())
}

fn cmd_trajectories<T: Real>(cfg: &RunConfig, seeds_path: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(seeds_path).map_err(|e| io_fail(seeds_path, e))?;
    let seeds = read_seeds(&text).map_err(|e| Failure::Config(format!("{}: {e}", seeds_path.display())))?;
    let s0: SimState<T> = initial_state(cfg)?;
    let dir = &cfg.output.directory;
    fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))?;
    let mut tracer = TrajectoryTracer::new(&seeds, cfg.stepper.mu, cfg.trajectory_substeps);
    simulate(&s0, cfg.t_end, &cfg.stepper, cfg.output.cadence, &mut [&mut tracer]).map_err(|e| run_failure(e, dir))?;
    let bundle = tracer.finish().map_err(|e| Failure::Config(e.to_string()))?;
    let path = dir.join("trajectories.ndjson");
    let mut w = open_output(&path, false).map_err(|e| io_fail(&path, e))?;
    write_trajectory_ndjson(&mut w, &bundle).map_err(|e| io_fail(&path, e))
}

fn threads(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| std::env::var("VISCO2D_THREADS").ok().and_then(|v| v.trim().parse().ok())).filter(|&n| n > 0)
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = threads(cli.threads) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    match cli.cmd {
        Cmd::Simulate { config, resume } => {
            let cfg = load_config(&config)?;
            match cfg.precision {
                Precision::F64 => cmd_simulate::<f64>(&cfg, resume.as_deref()),
                Precision::F32 => cmd_simulate::<f32>(&cfg, resume.as_deref()),
            }
        }
        Cmd::Family { config } => {
            let cfg = load_config(&config)?;
            match cfg.precision {
                Precision::F64 => cmd_family::<f64>(&cfg),
                Precision::F32 => cmd_family::<f32>(&cfg),
            }
        }
        Cmd::Diagnose { checkpoint, mu } => cmd_diagnose(&checkpoint, mu),
        Cmd::Trajectories { config, seeds } => {
            let cfg = load_config(&config)?;
            match cfg.precision {
                Precision::F64 => cmd_trajectories::<f64>(&cfg, &seeds),
                Precision::F32 => cmd_trajectories::<f32>(&cfg, &seeds),
            }
        }
    }
}

fn main() -> ExitCode {
    visco2d::alloc::retain_freed_memory();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("visco2d: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
