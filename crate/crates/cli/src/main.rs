#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use contdid::estimators::{
    BandwidthRule, BaselineMode, CefConfig, LongRunControls, Target, TrimRule,
};
use contdid::inference::BootstrapSpec;
use contdid::montecarlo::{run_montecarlo, McConfig};
use contdid::panel::{ingest_path, Schema};
use contdid::report::{diagnose, run_estimate, DeltaGrid, EstimateConfig, Request, Software};
use contdid::simulate::{generate, oracle, DgpSpec, Truth};
use contdid::Error;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "contdid",
    version,
    about = "Difference-in-differences with continuous treatments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate target parameters on a long-format panel.
    Estimate(EstimateArgs),
    /// Draw a panel from a simulation config and write it as CSV.
    Simulate(SimulateArgs),
    /// Repeat simulation and estimation, comparing estimates with oracle truths.
    Montecarlo(MontecarloArgs),
    /// Mover counts, baseline classes and overlap diagnostics.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Long-format delimited file with a header row.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "unit")]
    unit: String,
    #[arg(long, default_value = "time")]
    time: String,
    #[arg(long, default_value = "d")]
    d: String,
    #[arg(long, default_value = "y")]
    y: String,
    /// Optional unit-weight column.
    #[arg(long)]
    weight: Option<String>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

impl InputArgs {
    fn schema(&self) -> Result<Schema, Failure> {
        if !self.delimiter.is_ascii() {
            return Err(Failure::usage("delimiter must be a single ASCII character"));
        }
        Ok(Schema {
            unit: self.unit.clone(),
            time: self.time.clone(),
            d: self.d.clone(),
            y: self.y.clone(),
            weight: self.weight.clone(),
            delimiter: self.delimiter as u8,
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Tsv,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControlsArg {
    WindowStayers,
    NotYetMoved,
}

#[derive(Args)]
struct TuningArgs {
    /// Comma-separated targets: delta1, delta2, delta1_t_to_t+l, delta_plus, twfe, all.
    #[arg(long, default_value = "delta1")]
    target: String,
    /// reg, ps or both.
    #[arg(long, default_value = "reg")]
    method: String,
    /// rot (rule of thumb), cv (leave-one-out) or a fixed positive bandwidth.
    #[arg(long, default_value = "rot")]
    bandwidth: String,
    #[arg(long, default_value = "epanechnikov")]
    kernel: String,
    /// Local polynomial degree of the control regressions (0 or 1).
    #[arg(long, default_value_t = 1)]
    degree: u8,
    /// Minimum kernel effective sample size at a mover's baseline value.
    #[arg(long, default_value_t = 5.0)]
    min_ess: f64,
    /// none, abs:<threshold> or sd:<fraction of the movers' dD sd>.
    #[arg(long, default_value = "sd:0.01")]
    trim: String,
    /// off, auto or a strictly decreasing comma-separated list.
    #[arg(long, default_value = "off")]
    delta_grid: String,
    #[arg(long, default_value_t = 2)]
    pscore_degree: usize,
    /// Maximum propensity weight, or none.
    #[arg(long, default_value = "20")]
    clip: String,
    /// Bootstrap replications; 0 disables inference.
    #[arg(long, default_value_t = 0)]
    boot: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    /// Treatment changes up to this size count as stays.
    #[arg(long, default_value_t = 0.0)]
    tol: f64,
    /// Re-select tuning parameters inside every bootstrap replicate.
    #[arg(long)]
    reselect: bool,
    /// Horizon of the long-run target.
    #[arg(long)]
    ell: Option<usize>,
    /// Largest horizon of the dynamic targets.
    #[arg(long)]
    lmax: Option<usize>,
    #[arg(long, value_enum, default_value = "window-stayers")]
    long_run_controls: ControlsArg,
    /// Also estimate dynamic effects on units that only move below baseline.
    #[arg(long)]
    sign_split: bool,
}

impl TuningArgs {
    fn config(&self) -> Result<EstimateConfig, Failure> {
        let usage = |e: Error| Failure::usage(e.to_string());
        let num = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|_| Failure::usage(format!("{what}: not a number: {s:?}")))
        };
        let bandwidth = match self.bandwidth.as_str() {
            "rot" => BandwidthRule::RuleOfThumb,
            "cv" => BandwidthRule::Cv,
            h => BandwidthRule::Fixed(num(h, "bandwidth")?),
        };
        let trim = match self.trim.split_once(':') {
            None if self.trim == "none" => TrimRule::None,
            Some(("abs", v)) => TrimRule::Absolute(num(v, "trim")?),
            Some(("sd", v)) => TrimRule::SdFraction(num(v, "trim")?),
            _ => {
                return Err(Failure::usage(format!(
                    "trim: expected none, abs:<v> or sd:<c>, got {:?}",
                    self.trim
                )))
            }
        };
        let clip = match self.clip.as_str() {
            "none" => None,
            c => Some(num(c, "clip")?),
        };
        let cfg = EstimateConfig {
            requests: Request::parse_list(&self.target).map_err(usage)?,
            method: self.method.parse().map_err(usage)?,
            tol: self.tol,
            cef: CefConfig {
                bandwidth,
                kernel: self.kernel.parse().map_err(usage)?,
                degree: self.degree,
                min_ess: self.min_ess,
            },
            trim,
            pscore_degree: self.pscore_degree,
            clip,
            delta_grid: self.delta_grid.parse::<DeltaGrid>().map_err(usage)?,
            ell: self.ell,
            lmax: self.lmax,
            long_run_controls: match self.long_run_controls {
                ControlsArg::WindowStayers => LongRunControls::WindowStayers,
                ControlsArg::NotYetMoved => LongRunControls::NotYetMoved,
            },
            baseline: if self.sign_split {
                BaselineMode::SignSplit
            } else {
                BaselineMode::AboveOnly
            },
            bootstrap: (self.boot > 0).then_some(BootstrapSpec {
                replications: self.boot,
                seed: self.seed,
                ci_level: self.ci_level,
            }),
            reselect: self.reselect,
        };
        cfg.validate().map_err(usage)?;
        if self.boot == 0 && self.reselect {
            return Err(Failure::usage("--reselect needs --boot"));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Failure::usage(
                "--ci-level must lie strictly between 0 and 1",
            ));
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct DgpArgs {
    /// Key-value simulation config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config entry, e.g. --set n=500. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl DgpArgs {
    fn spec(&self) -> Result<DgpSpec, Failure> {
        let mut spec = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Failure::run(Error::Io(format!("{}: {e}", path.display()))))?;
                DgpSpec::parse(&text).map_err(Failure::run)?
            }
            None => DgpSpec::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Failure::usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
            spec.set(k.trim(), v.trim())
                .map_err(|e| Failure::usage(e.to_string()))?;
        }
        spec.validate().map_err(Failure::run)?;
        Ok(spec)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    dgp: DgpArgs,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination; standard output by default.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write the hidden truth and oracle values as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct MontecarloArgs {
    #[command(flatten)]
    dgp: DgpArgs,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[command(flatten)]
    tuning: TuningArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 0.0)]
    tol: f64,
    /// Fit stayer propensity models of this degree for the overlap report.
    #[arg(long)]
    pscore_degree: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

struct Failure {
    exit: u8,
    code: &'static str,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            exit: 1,
            code: "UsageError",
            message: message.into(),
        }
    }

    fn run(e: Error) -> Self {
        Failure {
            exit: 2,
            code: e.code(),
            message: e.to_string(),
        }
    }
}

fn emit(text: &str, output: Option<&Path>) -> Result<(), Failure> {
    let io_fail = |e: io::Error| Failure::run(Error::from(e));
    match output {
        Some(path) => fs::write(path, text).map_err(io_fail),
        None => io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(io_fail),
    }
}

fn to_json(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable report");
    s.push('\n');
    s
}

fn oracle_values(truth: &Truth) -> Value {
    let mut map = serde_json::Map::new();
    let mut put = |label: String, r: contdid::Result<f64>| {
        let v = match r {
            Ok(x) => json!(x),
            Err(e) => json!({ "error": e.code() }),
        };
        map.insert(label, v);
    };
    for t in [
        Target::Delta1,
        Target::Delta2i,
        Target::Delta2d,
        Target::Delta2,
        Target::DeltaPlus,
    ] {
        put(t.name().to_string(), oracle(truth, t, None));
    }
    for l in 0..truth.spec.periods - 1 {
        for t in [
            Target::Delta1LongRun,
            Target::DeltaPlusL,
            Target::DeltaPlusDoseL,
        ] {
            put(format!("{t}[{l}]"), oracle(truth, t, Some(l)));
        }
    }
    Value::Object(map)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Estimate(a) => {
            let schema = a.input.schema()?;
            let cfg = a.tuning.config()?;
            let panel = ingest_path(&a.input.input, &schema).map_err(Failure::run)?;
            let report = run_estimate(&panel, &cfg).map_err(Failure::run)?;
            let text = match a.out.format {
                Format::Json => to_json(&report),
                Format::Tsv => report.to_tsv(),
            };
            emit(&text, a.out.output.as_deref())
        }
        Command::Simulate(a) => {
            let mut spec = a.dgp.spec()?;
            if let Some(seed) = a.seed {
                spec.seed = seed;
            }
            let (panel, truth) = generate(&spec).map_err(Failure::run)?;
            let mut buf = Vec::new();
            panel.write_csv(&mut buf).map_err(Failure::run)?;
            emit(
                &String::from_utf8(buf).expect("utf-8 csv"),
                a.output.as_deref(),
            )?;
            if let Some(path) = &a.truth {
                let doc = json!({
                    "software": Software::default(),
                    "spec": spec,
                    "gamma": truth.gamma,
                    "units": truth.units,
                    "oracle": oracle_values(&truth),
                });
                emit(&to_json(&doc), Some(path))?;
            }
            Ok(())
        }
        Command::Montecarlo(a) => {
            let dgp = a.dgp.spec()?;
            let estimate = a.tuning.config()?;
            let cfg = McConfig {
                dgp,
                replications: a.reps,
                seed: a.tuning.seed,
                estimate,
            };
            let summary = run_montecarlo(&cfg).map_err(Failure::run)?;
            let text = match a.out.format {
                Format::Json => to_json(&summary),
                Format::Tsv => summary.to_tsv(),
            };
            emit(&text, a.out.output.as_deref())
        }
        Command::Diagnose(a) => {
            let schema = a.input.schema()?;
            if !(a.tol >= 0.0) {
                return Err(Failure::usage("tolerance must be >= 0"));
            }
            let panel = ingest_path(&a.input.input, &schema).map_err(Failure::run)?;
            let diag = diagnose(&panel, a.tol, a.pscore_degree).map_err(Failure::run)?;
            let doc = json!({ "software": Software::default(), "diagnostics": diag });
            emit(&to_json(&doc), a.output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let doc = json!({ "error": { "code": f.code, "message": f.message } });
            println!("{doc}");
            ExitCode::from(f.exit)
        }
    }
}
