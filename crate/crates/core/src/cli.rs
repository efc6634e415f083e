//! Command-line front end. Results go to stdout as JSON, diagnostics to
//! stderr. Exit codes: 0 success, 1 runtime or verification failure, 2 usage
//! error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::evaluator::{self, EvalSummary};
use crate::geometry::{BBox, ImageDims};
use crate::losses::{self, LossSpec};
use crate::metrics::{self, MetricKind};
use crate::simulator::{self, Family, KindStats, RunConfig};
use crate::theorem_checks::{self, TheoremError};

#[derive(Debug, Parser)]
#[command(name = "boxreg", version, about = "IoU-family metrics, MPDIoU losses and their verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct PairArgs {
    #[arg(long, value_parser = parse_kind)]
    pub kind: MetricKind,
    /// Ground-truth box as x1,y1,x2,y2.
    #[arg(long, value_parser = parse_box, allow_hyphen_values = true)]
    pub gt: [f64; 4],
    /// Predicted box as x1,y1,x2,y2.
    #[arg(long, value_parser = parse_box, allow_hyphen_values = true)]
    pub prd: [f64; 4],
    /// Image size as w,h. Required for mpdiou and rejected otherwise.
    #[arg(long, value_parser = parse_dims)]
    pub img: Option<(f64, f64)>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate a metric on one box pair.
    Metric(PairArgs),
    /// Evaluate a loss (1 - metric) on one box pair.
    Loss(PairArgs),
    /// Analytic loss gradient with respect to the predicted corners.
    Grad {
        #[command(flatten)]
        pair: PairArgs,
        /// Resolve min/max ties toward the prediction instead of failing.
        #[arg(long)]
        one_sided: bool,
    },
    /// Run gradient-descent regression suites from a JSON config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// COCO-style evaluation of a detection dataset.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = MatchMetric::Iou)]
        metric: MatchMetric,
        /// Also write the summary as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run a verification suite.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Equality tolerance of the theorem suite.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Image size of the bounds suite as w,h.
        #[arg(long, value_parser = parse_dims)]
        img: Option<(f64, f64)>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatchMetric {
    Iou,
    Mpdiou,
}

impl From<MatchMetric> for MetricKind {
    fn from(m: MatchMetric) -> Self {
        match m {
            MatchMetric::Iou => MetricKind::Iou,
            MatchMetric::Mpdiou => MetricKind::Mpdiou,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Theorem,
    Bounds,
}

fn parse_kind(s: &str) -> Result<MetricKind, String> {
    s.parse()
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(format!("expected {N} comma-separated numbers, got {}", parts.len()));
    }
    let mut out = [0.0f64; N];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.parse().map_err(|_| format!("`{p}` is not a number"))?;
        if !o.is_finite() {
            return Err(format!("`{p}` is not finite"));
        }
    }
    Ok(out)
}

fn parse_box(s: &str) -> Result<[f64; 4], String> {
    parse_floats::<4>(s)
}

fn parse_dims(s: &str) -> Result<(f64, f64), String> {
    let [w, h] = parse_floats::<2>(s)?;
    ImageDims::new(w, h).map_err(|e| e.to_string())?;
    Ok((w, h))
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
    /// A verification suite found a violation; carries the report to print.
    Verification(serde_json::Value),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) | CliError::Verification(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn dims(img: (f64, f64)) -> ImageDims {
    ImageDims::new(img.0, img.1).expect("validated by the flag parser")
}

impl PairArgs {
    fn resolve(&self) -> Result<(LossSpec, BBox, BBox), CliError> {
        let img = match (self.kind.requires_image(), self.img) {
            (true, None) => return Err(CliError::Usage(format!("--img is required for --kind {}", self.kind))),
            (false, Some(_)) => return Err(CliError::Usage(format!("--img is only accepted for --kind mpdiou, not {}", self.kind))),
            (_, img) => img.map(dims),
        };
        let gt = BBox::from_array(self.gt).map_err(|e| CliError::Usage(format!("--gt: {e}")))?;
        let prd = BBox::from_array(self.prd).map_err(|e| CliError::Usage(format!("--prd: {e}")))?;
        let spec = LossSpec::new(self.kind, img).map_err(runtime)?;
        Ok((spec, gt, prd))
    }
}

/// Config accepted by `simulate`.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub img: ImageDims,
    pub families: Vec<FamilyConfig>,
    pub kinds: Vec<MetricKind>,
    #[serde(default = "default_step")]
    pub step_size: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_stop_loss")]
    pub stop_loss: f64,
    #[serde(default = "default_stop_iou")]
    pub stop_iou: f64,
    /// Seeds tie-breaking perturbations during descent.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub family: Family,
    pub n_cases: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_step() -> f64 {
    RunConfig::DEFAULT_STEP_SIZE
}
fn default_max_iters() -> usize {
    RunConfig::DEFAULT_MAX_ITERS
}
fn default_stop_loss() -> f64 {
    RunConfig::DEFAULT_STOP_LOSS
}
fn default_stop_iou() -> f64 {
    RunConfig::DEFAULT_STOP_IOU
}

impl SimulateConfig {
    pub fn from_json_str(text: &str) -> Result<Self, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            format!("config error at `{path}`: {}", e.inner())
        })?;
        if cfg.kinds.is_empty() {
            return Err("config error at `kinds`: at least one kind is required".into());
        }
        if cfg.families.is_empty() {
            return Err("config error at `families`: at least one family is required".into());
        }
        Ok(cfg)
    }

    fn run_config(&self, kind: MetricKind) -> RunConfig {
        RunConfig {
            kind,
            step_size: self.step_size,
            max_iters: self.max_iters,
            stop_loss: self.stop_loss,
            stop_iou: self.stop_iou,
            seed: self.seed,
        }
    }
}

const PROTOCOL_NOTE: &str = "Implementer-defined protocol: plain gradient descent on predicted corners over synthetic suites. \
Iteration counts compare losses under this protocol only and do not reproduce detector training results.";

#[derive(Debug, Serialize)]
struct FamilySummary {
    family: Family,
    n_cases: usize,
    seed: u64,
    stats: Vec<KindStats>,
    ranking: Vec<MetricKind>,
    /// Whether MPDIoU ranked first or tied for first; only reported for
    /// contained-same-aspect suites that include MPDIoU.
    #[serde(skip_serializing_if = "Option::is_none")]
    mpdiou_fastest_or_tied: Option<bool>,
    notes: Vec<String>,
}

fn mpdiou_fastest_or_tied(stats: &[KindStats], ranking: &[MetricKind]) -> Option<bool> {
    let mpd = stats.iter().find(|s| s.kind == MetricKind::Mpdiou)?;
    let best = stats.iter().find(|s| s.kind == ranking[0])?;
    Some(mpd.reached == best.reached && mpd.mean_iterations == best.mean_iterations)
}

fn simulate(config: &Path, out: &Path) -> Result<serde_json::Value, CliError> {
    let text = fs::read_to_string(config).map_err(|e| runtime(format!("cannot read `{}`: {e}", config.display())))?;
    let cfg = SimulateConfig::from_json_str(&text).map_err(CliError::Runtime)?;
    fs::create_dir_all(out).map_err(|e| runtime(format!("cannot create `{}`: {e}", out.display())))?;

    let mut families = Vec::new();
    for fc in &cfg.families {
        let suite = simulator::generate_suite(fc.family, fc.n_cases, cfg.img, fc.seed).map_err(runtime)?;
        let mut stats = Vec::new();
        for &kind in &cfg.kinds {
            let records = simulator::run_regression(&suite, &cfg.run_config(kind)).map_err(runtime)?;
            let path = out.join(format!("{}_{}.csv", fc.family.as_str(), kind));
            simulator::export_records(&records, &path).map_err(runtime)?;
            stats.push(simulator::kind_stats(kind, &records));
        }
        let ranking = simulator::rank_kinds(&stats);
        let mut notes = Vec::new();
        let flag = (fc.family == Family::ContainedSameAspect)
            .then(|| mpdiou_fastest_or_tied(&stats, &ranking))
            .flatten();
        if flag == Some(false) {
            let msg = format!(
                "mpdiou did not rank fastest on {}; ranking: {}",
                fc.family.as_str(),
                ranking.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(" > ")
            );
            eprintln!("note: {msg}");
            notes.push(msg);
        }
        families.push(FamilySummary {
            family: fc.family,
            n_cases: fc.n_cases,
            seed: fc.seed,
            stats,
            ranking,
            mpdiou_fastest_or_tied: flag,
            notes,
        });
    }

    let summary = json!({
        "protocol_note": PROTOCOL_NOTE,
        "config": cfg,
        "families": families,
    });
    let path = out.join("summary.json");
    let mut body = serde_json::to_string_pretty(&summary).map_err(runtime)?;
    body.push('\n');
    fs::write(&path, body).map_err(|e| runtime(format!("cannot write `{}`: {e}", path.display())))?;
    Ok(summary)
}

fn evaluate(data: &Path, kind: MetricKind, csv: Option<&Path>) -> Result<EvalSummary, CliError> {
    let ds = evaluator::load_dataset(data).map_err(runtime)?;
    let summary = evaluator::summarize(&ds, kind).map_err(runtime)?;
    if let Some(path) = csv {
        let file = fs::File::create(path).map_err(|e| runtime(format!("cannot create `{}`: {e}", path.display())))?;
        evaluator::write_summary_csv(&summary, file).map_err(runtime)?;
    }
    Ok(summary)
}

fn verification_failure(suite: &str, e: TheoremError) -> CliError {
    match e.counterexample() {
        Some(c) => CliError::Verification(json!({
            "suite": suite,
            "passed": false,
            "error": e.to_string(),
            "counterexample": c,
        })),
        None => runtime(e),
    }
}

/// Runs one parsed command, returning the JSON document for stdout.
pub fn execute(cli: &Cli) -> Result<serde_json::Value, CliError> {
    match &cli.command {
        Command::Metric(pair) => {
            let (spec, gt, prd) = pair.resolve()?;
            let m = metrics::compute(spec.kind(), &gt, &prd, spec.img()).map_err(runtime)?;
            serde_json::to_value(m).map_err(runtime)
        }
        Command::Loss(pair) => {
            let (spec, gt, prd) = pair.resolve()?;
            let l = losses::loss(&spec, &gt, &prd).map_err(runtime)?;
            Ok(json!({ "kind": spec.kind(), "loss": l }))
        }
        Command::Grad { pair, one_sided } => {
            let (spec, gt, prd) = pair.resolve()?;
            let g = if *one_sided {
                losses::gradient_one_sided(&spec, &gt, &prd)
            } else {
                losses::gradient(&spec, &gt, &prd)
            }
            .map_err(runtime)?;
            Ok(json!({ "kind": spec.kind(), "gradient": g }))
        }
        Command::Simulate { config, out } => simulate(config, out),
        Command::Evaluate { data, metric, csv } => {
            let s = evaluate(data, (*metric).into(), csv.as_deref())?;
            serde_json::to_value(&s).map_err(runtime)
        }
        Command::Verify {
            suite,
            samples,
            seed,
            tol,
            img,
        } => {
            let samples = *samples as usize;
            match suite {
                Suite::Theorem => {
                    if img.is_some() {
                        return Err(CliError::Usage("--img only applies to --suite bounds".into()));
                    }
                    if !(tol.is_finite() && *tol > 0.0) {
                        return Err(CliError::Usage(format!("--tol must be positive, got {tol}")));
                    }
                    let r = theorem_checks::run_theorem_suite(samples, *seed, *tol)
                        .map_err(|e| verification_failure("theorem", e))?;
                    Ok(json!({ "suite": "theorem", "passed": true, "report": r }))
                }
                Suite::Bounds => {
                    let img = dims(img.unwrap_or((640.0, 480.0)));
                    let r = theorem_checks::verify_bounds(samples, img, *seed)
                        .map_err(|e| verification_failure("bounds", e))?;
                    Ok(json!({ "suite": "bounds", "passed": r.violations == 0, "report": r }))
                }
            }
        }
    }
}

fn print_json(v: &serde_json::Value) {
    let mut out = std::io::stdout().lock();
    let _ = serde_json::to_writer_pretty(&mut out, v);
    let _ = writeln!(out);
}

/// Parses the process arguments and runs the command.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(v) => {
            print_json(&v);
            ExitCode::SUCCESS
        }
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("error: {msg}"),
                CliError::Runtime(msg) => eprintln!("error: {msg}"),
                CliError::Verification(report) => {
                    eprintln!("verification failed: {}", report["error"].as_str().unwrap_or(""));
                    print_json(report);
                }
            }
            ExitCode::from(e.exit_code())
        }
    }
}
