//! `blinkfit`: simulate blinking traces, extract lifetimes, train MFR
//! models and run benchmark sweeps.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 an estimate did not
//! converge.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blinkfit::bench::{self, Metric, Scenario};
use blinkfit::dwell::histograms_from_trace;
use blinkfit::ga::{run_ga, GaConfig};
use blinkfit::io;
use blinkfit::lm::{estimate_lm, LmConfig};
use blinkfit::mfr::{self, CorpusConfig, MfrModel};
use blinkfit::seed::{derive_seed, rng_from_seed, DEFAULT_SEED};
use blinkfit::sim::{generate_trace, EmitterModel, PhotonNoise, TraceConfig};
use blinkfit::units::parse_seconds;
use blinkfit::{BlinkError, Method, RateEstimate, State};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "blinkfit", version, about = "Lifetime extraction for blinking emitters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn seconds(s: &str) -> Result<f64, String> {
    parse_seconds(s).map_err(|e| e.to_string())
}

#[derive(Clone, Copy, ValueEnum)]
enum Noise {
    Poisson,
    None,
}

impl From<Noise> for PhotonNoise {
    fn from(n: Noise) -> Self {
        match n {
            Noise::Poisson => PhotonNoise::Poisson,
            Noise::None => PhotonNoise::None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Lm,
    Mfr,
    Ga,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a two-state trace; writes CSV plus a sidecar JSON.
    Simulate {
        #[arg(long, value_parser = seconds, default_value = "15ms")]
        tau_on: f64,
        #[arg(long, value_parser = seconds, default_value = "45ms")]
        tau_off: f64,
        #[arg(long, value_parser = seconds, default_value = "2s")]
        duration: f64,
        #[arg(long, value_parser = seconds, default_value = "1ms")]
        bin_width: f64,
        #[arg(long, value_enum, default_value = "poisson")]
        noise: Noise,
        /// Mean counts per bin in the on state.
        #[arg(long, default_value_t = 100.0)]
        on_counts: f64,
        /// Mean counts per bin in the off state.
        #[arg(long, default_value_t = 10.0)]
        off_counts: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate on and off lifetimes of a trace.
    Analyze {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Model basename as written by train-mfr (reads BASE_on.json, BASE_off.json).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        ga_config: Option<PathBuf>,
        /// Write the GA acceptance logs to BASE_on.csv and BASE_off.csv.
        #[arg(long)]
        ga_log: Option<PathBuf>,
        /// Write the dwell histograms as CSV.
        #[arg(long)]
        histograms: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// JSON report path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train on/off MFR models on simulated traces.
    TrainMfr {
        #[arg(long, value_parser = seconds, default_value = "1ms")]
        tau_min: f64,
        #[arg(long, value_parser = seconds, default_value = "100ms")]
        tau_max: f64,
        #[arg(long, default_value_t = mfr::DEFAULT_TRAINING_SETS)]
        count: usize,
        #[arg(long, value_parser = seconds, default_value = "0.2s")]
        duration: f64,
        #[arg(long, value_parser = seconds, default_value = "1ms")]
        bin_width: f64,
        #[arg(long, value_enum, default_value = "poisson")]
        noise: Noise,
        #[arg(long, default_value_t = mfr::DEFAULT_RIDGE)]
        ridge: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Output basename; writes OUT_on.json and OUT_off.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a seeded sweep and write result and heatmap CSVs.
    Bench {
        /// `default`, `nv`, or a scenario JSON file.
        #[arg(long, default_value = "default")]
        scenario: String,
        #[arg(long)]
        trials: Option<usize>,
        /// Comma-separated durations overriding the scenario's.
        #[arg(long, value_delimiter = ',', value_parser = seconds)]
        durations: Option<Vec<f64>>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "lm,mfr,ga")]
        methods: Vec<MethodArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    NotConverged,
}

impl From<BlinkError> for Failure {
    fn from(e: BlinkError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = std::env::var("BLINKFIT_THREADS").ok().and_then(|v| v.parse().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate {
            tau_on,
            tau_off,
            duration,
            bin_width,
            noise,
            on_counts,
            off_counts,
            seed,
            out,
        } => simulate(
            tau_on,
            tau_off,
            duration,
            TraceConfig {
                bin_width,
                photon_noise: noise.into(),
                mean_on_counts: on_counts,
                mean_off_counts: off_counts,
            },
            seed,
            &out,
        ),
        Command::Analyze {
            trace,
            method,
            model,
            ga_config,
            ga_log,
            histograms,
            seed,
            report,
        } => analyze(AnalyzeArgs {
            trace,
            method,
            model,
            ga_config,
            ga_log,
            histograms,
            seed,
            report,
        }),
        Command::TrainMfr {
            tau_min,
            tau_max,
            count,
            duration,
            bin_width,
            noise,
            ridge,
            seed,
            out,
        } => {
            let cfg = CorpusConfig {
                tau_range: (tau_min, tau_max),
                count,
                ..CorpusConfig::new(duration, TraceConfig::new(bin_width).with_noise(noise.into()))
            };
            train_mfr(&cfg, ridge, seed, &out)
        }
        Command::Bench {
            scenario,
            trials,
            durations,
            methods,
            seed,
            out,
        } => run_bench(&scenario, trials, durations, &methods, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::NotConverged) => ExitCode::from(2),
    }
}

fn simulate(tau_on: f64, tau_off: f64, duration: f64, cfg: TraceConfig, seed: u64, out: &Path) -> Result<(), Failure> {
    let model = EmitterModel::two_state(tau_on, tau_off);
    let trace = generate_trace(&model, duration, &cfg, seed)?;
    io::write_trace(out, &trace)?;
    println!(
        "wrote {} bins ({} s) to {}",
        trace.len(),
        trace.duration(),
        out.display()
    );
    println!(
        "truth: tau_on = {} ms, tau_off = {} ms, on fraction = {:.4}",
        tau_on * 1e3,
        tau_off * 1e3,
        model.on_fraction()
    );
    println!("seed: {seed}");
    Ok(())
}

struct AnalyzeArgs {
    trace: PathBuf,
    method: MethodArg,
    model: Option<PathBuf>,
    ga_config: Option<PathBuf>,
    ga_log: Option<PathBuf>,
    histograms: Option<PathBuf>,
    seed: u64,
    report: Option<PathBuf>,
}

/// `BASE_on.json` / `BASE_off.json`, tolerating a `.json` suffix on BASE.
fn model_paths(base: &Path) -> (PathBuf, PathBuf) {
    let stem = if base.extension().is_some_and(|e| e == "json") {
        base.with_extension("")
    } else {
        base.to_path_buf()
    };
    let with = |s: &str| {
        let mut name = stem.clone().into_os_string();
        name.push(s);
        PathBuf::from(name)
    };
    (with("_on.json"), with("_off.json"))
}

fn suffixed(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base.to_path_buf().into_os_string();
    name.push(suffix);
    PathBuf::from(name)
}

#[derive(serde::Serialize)]
struct Report<'a> {
    trace: String,
    method: Method,
    seed: u64,
    bin_width_s: f64,
    duration_s: f64,
    truth: Option<io::Truth>,
    on: &'a RateEstimate,
    off: &'a RateEstimate,
}

fn analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    let method = match a.method {
        MethodArg::Lm => Method::Lm,
        MethodArg::Mfr => Method::Mfr,
        MethodArg::Ga => Method::Ga,
    };
    let models = if method == Method::Mfr {
        let Some(base) = &a.model else {
            return Err(Failure::Usage(
                "--method mfr requires --model BASE (see `blinkfit train-mfr`)".into(),
            ));
        };
        let (on, off) = model_paths(base);
        let on: MfrModel = io::read_json(&on)?;
        let off: MfrModel = io::read_json(&off)?;
        Some((on, off))
    } else {
        None
    };
    let ga_cfg: GaConfig = match &a.ga_config {
        Some(p) => io::read_json(p)?,
        None => GaConfig::default(),
    };
    ga_cfg.validate()?;

    let trace = io::read_trace(&a.trace)?;
    let (h_on, h_off) = histograms_from_trace(&trace)?;
    if let Some(p) = &a.histograms {
        io::write_histograms(p, &[&h_on, &h_off])?;
    }

    let mut estimates = Vec::new();
    for (i, hist) in [&h_on, &h_off].into_iter().enumerate() {
        let est = match method {
            Method::Lm => estimate_lm(hist, ga_cfg.tau_range, &LmConfig::default()),
            Method::Mfr => {
                let (on, off) = models.as_ref().expect("loaded above");
                let m = if hist.state == State::On { on } else { off };
                mfr::estimate_mfr(m, hist, trace.duration())
            }
            Method::Ga => {
                let mut rng = rng_from_seed(derive_seed(a.seed, &[i as u64 + 1]));
                match run_ga(hist, &ga_cfg, &mut rng) {
                    Ok(o) => {
                        if let Some(base) = &a.ga_log {
                            io::write_ga_log(&suffixed(base, &format!("_{}.csv", hist.state)), &o.log)?;
                        }
                        o.estimate
                    }
                    Err(BlinkError::InsufficientData { .. }) => RateEstimate::failed(Method::Ga, "insufficient_data"),
                    Err(BlinkError::NoEstimate) => RateEstimate::failed(Method::Ga, "no_estimate"),
                    Err(e) => return Err(e.into()),
                }
            }
        };
        estimates.push(est);
    }

    let truth = trace.truth.map(|(on, off)| io::Truth {
        tau_on_s: on,
        tau_off_s: off,
    });
    for (state, est) in [State::On, State::Off].iter().zip(&estimates) {
        let mut line = format!(
            "{state:<3} tau = {:.4} ms  std_err = {:.4} ms  converged = {}",
            est.tau_hat * 1e3,
            est.std_err * 1e3,
            est.converged
        );
        if let Some(t) = truth {
            let tau = if *state == State::On { t.tau_on_s } else { t.tau_off_s };
            line.push_str(&format!("  (truth {} ms)", tau * 1e3));
        }
        println!("{line}");
        for (k, v) in &est.diagnostics {
            println!("    {k} = {v}");
        }
    }
    if let Some(p) = &a.report {
        let report = Report {
            trace: a.trace.display().to_string(),
            method,
            seed: a.seed,
            bin_width_s: trace.bin_width,
            duration_s: trace.duration(),
            truth,
            on: &estimates[0],
            off: &estimates[1],
        };
        io::write_json(p, &report)?;
    }
    if estimates.iter().all(|e| e.converged) {
        Ok(())
    } else {
        Err(Failure::NotConverged)
    }
}

fn train_mfr(cfg: &CorpusConfig, ridge: f64, seed: u64, out: &Path) -> Result<(), Failure> {
    let pair = mfr::train_pair(cfg, ridge, seed)?;
    let (on, off) = model_paths(out);
    io::write_json(&on, &pair.on)?;
    io::write_json(&off, &pair.off)?;
    println!(
        "trained on {} traces of {} s, {} features: {} and {}",
        cfg.count,
        cfg.trace_duration,
        pair.on.n,
        on.display(),
        off.display()
    );
    Ok(())
}

fn run_bench(
    scenario: &str,
    trials: Option<usize>,
    durations: Option<Vec<f64>>,
    methods: &[MethodArg],
    seed: Option<u64>,
    out: &Path,
) -> Result<(), Failure> {
    let mut sc = match scenario {
        "default" => Scenario::default(),
        "nv" => Scenario::nv_center(),
        file => io::read_json(Path::new(file))?,
    };
    if let Some(t) = trials {
        sc.trials_per_cell = t;
    }
    if let Some(d) = durations {
        sc.durations = d;
    }
    if let Some(s) = seed {
        sc.base_seed = s;
    }
    sc.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", out.display())))?;
    let methods: Vec<Method> = methods
        .iter()
        .map(|m| match m {
            MethodArg::Lm => Method::Lm,
            MethodArg::Mfr => Method::Mfr,
            MethodArg::Ga => Method::Ga,
        })
        .collect();

    let result = bench::sweep(&sc, &methods)?;
    std::fs::write(out.join("results.csv"), bench::results_csv(&result.cells))?;
    for state in [State::On, State::Off] {
        for metric in [Metric::Accuracy, Metric::Precision] {
            let name = format!("heatmap_{}_{}.csv", metric.as_str(), state);
            std::fs::write(out.join(name), bench::heatmap_csv(&result.cells, state, metric))?;
        }
    }
    io::write_json(&out.join("scenario.json"), &sc)?;
    print!("{}", bench::summary_table(&result.cells));
    Ok(())
}
