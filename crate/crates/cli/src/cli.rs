//! Argument parsing and dispatch for the `fairquota` binary.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use fairquota::data_model::write_score_file;
use fairquota::fairness_tree::{recommend_with_selection, SMALL_PROGRAM_FRACTION};
use fairquota::reporting::Format;
use fairquota::synth::SynthError;
use fairquota::temporal::{ModelScores, TemporalError, TemporalOptions};
use fairquota::{
    emit, generate_population, parse_score_file, recommend_metric, run_temporal_eval, BalanceMode, Cohort,
    FairnessContext, Focus, IngestConfig, Nature, ProgramScale, Report, SearchStrategy, SelectionRule, SynthSpec,
    TemporalConfig,
};
use serde::de::DeserializeOwned;

use crate::service::{
    resolve_tie, AuditQuery, BalanceOptions, BalanceRequest, CurveQuery, DatasetSnapshot, ServiceError, TieBreakKind,
    TradeoffQuery,
};

#[derive(Debug, Parser)]
#[command(name = "fairquota", version, about = "Group fairness audits and recall-balanced selection lists")]
pub struct Cli {
    /// Tie-break seed (implies --tie-break seeded), or the synth seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write the output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Output format: json, csv or plotdata.
    #[arg(long, global = true, default_value = "json")]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Audit the unadjusted top-K list.
    Audit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        reference_group: Option<String>,
        #[command(flatten)]
        tie: TieArgs,
    },
    /// Build a recall-balanced selection plan and audit it.
    Balance(BalanceArgs),
    /// Compare the unadjusted list with the four balanced alternatives.
    Tradeoff {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        reference_group: Option<String>,
        /// Trim trailing negatives in the fixed-size options.
        #[arg(long)]
        trim: bool,
        #[command(flatten)]
        tie: TieArgs,
    },
    /// Top-K precision and group recalls over a range of K.
    Curve {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        kmin: Option<usize>,
        #[arg(long)]
        kmax: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        #[command(flatten)]
        tie: TieArgs,
    },
    /// Attributes, groups and per-group counts of a score file.
    Dataset {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Recommend a parity metric. Asks on stdin when --nature is absent.
    Tree {
        #[arg(long, value_parser = parse_choice::<Nature>)]
        nature: Option<Nature>,
        #[arg(long, value_parser = parse_choice::<ProgramScale>)]
        scale: Option<ProgramScale>,
        #[arg(long, value_parser = parse_choice::<Focus>)]
        focus: Option<Focus>,
        /// Share of the population the program reaches, if known.
        #[arg(long)]
        selected_fraction: Option<f64>,
    },
    /// Evaluate models over temporal splits and rank them.
    TemporalEval(TemporalArgs),
    /// Write a synthetic score file.
    Synth {
        /// JSON generator spec.
        #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
        spec: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
    },
    /// Serve the HTTP API over one score file.
    Serve {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Directory of static UI assets served outside /api.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Score file (CSV with entity_id, score, label and attribute columns).
    #[arg(long)]
    pub input: PathBuf,
    /// JSON column mapping; by default every extra column is an attribute.
    #[arg(long)]
    pub ingest_config: Option<PathBuf>,
    /// Required when the file has more than one attribute column.
    #[arg(long)]
    pub attribute: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TieArg {
    EntityId,
    Seeded,
}

#[derive(Debug, Clone, Args)]
pub struct TieArgs {
    #[arg(long, value_enum)]
    pub tie_break: Option<TieArg>,
}

impl TieArgs {
    fn kind(&self) -> Option<TieBreakKind> {
        self.tie_break.map(|t| match t {
            TieArg::EntityId => TieBreakKind::EntityId,
            TieArg::Seeded => TieBreakKind::Seeded,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Equalized,
    Proportional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SearchArg {
    FixedStep,
    Exact,
}

#[derive(Debug, Clone, Args)]
pub struct BalanceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[command(flatten)]
    pub constraint: ConstraintArgs,
    #[arg(long)]
    pub reference_group: Option<String>,
    /// Step for the fixed-step search, in reference-recall units.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long, value_enum)]
    pub search: Option<SearchArg>,
    #[arg(long)]
    pub trim: bool,
    /// Proportional by size: fill an overshooting search back to exactly K.
    #[arg(long)]
    pub fill_to_budget: bool,
    #[command(flatten)]
    pub tie: TieArgs,
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct ConstraintArgs {
    /// Total list size.
    #[arg(long)]
    pub k: Option<usize>,
    /// Recall every group should reach (equalized).
    #[arg(long)]
    pub recall: Option<f64>,
    /// Recall of the reference group (proportional).
    #[arg(long)]
    pub ref_recall: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    MeanMinusLambdaStddev,
    BestMean,
    MinRegret,
}

#[derive(Debug, Clone, Args)]
pub struct TemporalArgs {
    /// Score files; rows without model_id take the file stem as model id.
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub ingest_config: Option<PathBuf>,
    #[arg(long)]
    pub start: NaiveDate,
    #[arg(long)]
    pub end: NaiveDate,
    #[arg(long, default_value_t = 6)]
    pub interval_months: u32,
    #[arg(long, default_value_t = 6)]
    pub label_window_months: u32,
    #[arg(long)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "mean-minus-lambda-stddev")]
    pub rule: RuleArg,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Evaluate splits with fewer than K rows instead of failing.
    #[arg(long)]
    pub lenient: bool,
    #[command(flatten)]
    pub tie: TieArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 50,000 people in five groups at 4.4% prevalence.
    DeskScale,
}

/// Accepts the snake_case names, dashes for underscores, and the short
/// forms `small`, `intervened`, `not-intervened` and `actual-need`.
pub fn parse_choice<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    let norm = s.trim().to_ascii_lowercase().replace('-', "_");
    let full = match norm.as_str() {
        "small" => "small_fraction_of_need",
        "intervened" | "served" => "intervened_or_served",
        "not_intervened" | "unserved" => "not_intervened_or_unserved",
        "actual_need" | "unwarranted" => "actual_need_or_unwarranted",
        other => other,
    };
    serde_json::from_value(serde_json::Value::String(full.to_string())).map_err(|_| format!("unknown choice `{s}`"))
}

fn read_text(path: &Path) -> Result<String, ServiceError> {
    std::fs::read_to_string(path)
        .map_err(|e| ServiceError::Unprocessable(format!("cannot read {}: {e}", path.display())))
}

fn ingest_config(path: Option<&Path>) -> Result<IngestConfig, ServiceError> {
    match path {
        Some(p) => Ok(IngestConfig::from_json(&read_text(p)?)?),
        None => Ok(IngestConfig::default()),
    }
}

/// Reads a score file into a cohort.
pub fn load_cohort(path: &Path, config: Option<&Path>) -> Result<Cohort, ServiceError> {
    let cfg = ingest_config(config)?;
    let file =
        File::open(path).map_err(|e| ServiceError::Unprocessable(format!("cannot open {}: {e}", path.display())))?;
    Ok(parse_score_file(BufReader::new(file), &cfg, &path.display().to_string())?)
}

fn snapshot(data: &DataArgs) -> Result<DatasetSnapshot, ServiceError> {
    DatasetSnapshot::new(load_cohort(&data.input, data.ingest_config.as_deref())?)
}

fn temporal_error(e: TemporalError) -> ServiceError {
    match e {
        TemporalError::InvalidConfig(_) | TemporalError::InvalidLambda(_) => ServiceError::Invalid(e.to_string()),
        other => ServiceError::Unprocessable(other.to_string()),
    }
}

fn synth_error(e: SynthError) -> ServiceError {
    ServiceError::Invalid(e.to_string())
}

/// What a subcommand produced.
enum Output {
    Text(String),
    Served,
}

fn render<R: Report>(r: &R, format: Format) -> Result<Output, ServiceError> {
    Ok(Output::Text(emit(r, format)?))
}

fn ask<T: DeserializeOwned>(
    input: &mut dyn BufRead,
    prompt: &mut dyn Write,
    question: &str,
    choices: &[&str],
    optional: bool,
) -> Result<Option<T>, ServiceError> {
    loop {
        let skip = if optional { ", blank to skip" } else { "" };
        let _ = write!(prompt, "{question} [{}{skip}]: ", choices.join("/"));
        let _ = prompt.flush();
        let mut line = String::new();
        let n = input.read_line(&mut line).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        if n == 0 {
            return Err(ServiceError::Invalid(format!("no answer to `{question}`")));
        }
        if line.trim().is_empty() && optional {
            return Ok(None);
        }
        match parse_choice(&line) {
            Ok(v) => return Ok(Some(v)),
            Err(e) => {
                let _ = writeln!(prompt, "{e}");
            }
        }
    }
}

fn questionnaire(input: &mut dyn BufRead, prompt: &mut dyn Write) -> Result<FairnessContext, ServiceError> {
    let nature: Nature =
        ask(input, prompt, "Is the intervention punitive or assistive?", &["punitive", "assistive"], false)?
            .expect("required");
    let scale = match nature {
        Nature::Assistive => ask(input, prompt, "Can it reach everyone in need?", &["small", "substantial"], false)?,
        Nature::Punitive => None,
    };
    let focus = if scale == Some(ProgramScale::SmallFractionOfNeed) {
        None
    } else {
        ask(
            input,
            prompt,
            "Whose errors matter most?",
            &["everyone", "intervened", "not-intervened", "actual-need"],
            true,
        )?
    };
    Ok(FairnessContext { nature, scale, focus })
}

fn dispatch(cli: &Cli, stdin: &mut dyn BufRead, stderr: &mut dyn Write) -> Result<Output, ServiceError> {
    let format = cli.format;
    match &cli.command {
        Command::Audit { data, k, reference_group, tie } => {
            let snap = snapshot(data)?;
            let q = AuditQuery {
                attribute: data.attribute.clone(),
                k: *k,
                reference: reference_group.clone(),
                tie_break: tie.kind(),
                seed: cli.seed,
            };
            render(&snap.audit(&q)?, format)
        }
        Command::Balance(b) => {
            let snap = snapshot(&b.data)?;
            render(&snap.balance(&balance_request(b, cli.seed))?, format)
        }
        Command::Tradeoff { data, k, reference_group, trim, tie } => {
            let snap = snapshot(data)?;
            let q = TradeoffQuery {
                attribute: data.attribute.clone(),
                k: *k,
                reference: reference_group.clone(),
                trim: *trim,
                tie_break: tie.kind(),
                seed: cli.seed,
            };
            render(&snap.tradeoff(&q)?, format)
        }
        Command::Curve { data, kmin, kmax, stride, tie } => {
            let snap = snapshot(data)?;
            let q = CurveQuery {
                attribute: data.attribute.clone(),
                kmin: *kmin,
                kmax: *kmax,
                stride: *stride,
                tie_break: tie.kind(),
                seed: cli.seed,
            };
            render(&snap.curve(&q)?, format)
        }
        Command::Dataset { data } => render(snapshot(data)?.summary(), format),
        Command::Tree { nature, scale, focus, selected_fraction } => {
            let ctx = match nature {
                Some(n) => FairnessContext { nature: *n, scale: *scale, focus: *focus },
                None => questionnaire(stdin, stderr)?,
            };
            let rec = match selected_fraction {
                Some(f) if !(0.0..=1.0).contains(f) => {
                    return Err(ServiceError::Invalid(format!("selected fraction {f} is outside [0, 1]")))
                }
                Some(f) => recommend_with_selection(&ctx, *f, SMALL_PROGRAM_FRACTION),
                None => recommend_metric(&ctx),
            }
            .map_err(|e| ServiceError::Invalid(e.to_string()))?;
            render(&rec, format)
        }
        Command::TemporalEval(t) => render(&temporal(t, cli.seed)?, format),
        Command::Synth { spec, preset } => {
            let mut s = match (spec, preset) {
                (Some(p), _) => SynthSpec::from_json(&read_text(p)?).map_err(synth_error)?,
                (None, _) => SynthSpec::desk_scale(cli.seed.unwrap_or(fairquota::ranking::DEFAULT_SEED)),
            };
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            let cohort = generate_population(&s).map_err(synth_error)?;
            let mut buf = Vec::new();
            write_score_file(&cohort, &mut buf)?;
            Ok(Output::Text(String::from_utf8(buf).expect("score files are utf-8")))
        }
        Command::Serve { data, port, host, static_dir } => {
            let snap = snapshot(data)?;
            let addr = SocketAddr::new(*host, *port);
            let rt = tokio::runtime::Runtime::new().map_err(|e| ServiceError::Unprocessable(e.to_string()))?;
            rt.block_on(crate::server::serve(snap, addr, static_dir.clone()))
                .map_err(|e| ServiceError::Unprocessable(format!("server on {addr}: {e}")))?;
            Ok(Output::Served)
        }
    }
}

/// The request `fairquota balance` sends to the service.
pub fn balance_request(b: &BalanceArgs, seed: Option<u64>) -> BalanceRequest {
    let mode = match b.mode {
        ModeArg::Equalized => BalanceMode::Equalized,
        ModeArg::Proportional => BalanceMode::Proportional,
    };
    BalanceRequest {
        attribute: b.data.attribute.clone(),
        k: b.constraint.k,
        recall: b.constraint.recall,
        ref_recall: b.constraint.ref_recall,
        reference_group: b.reference_group.clone(),
        options: BalanceOptions {
            step_size: b.step,
            search_strategy: b.search.map(|s| match s {
                SearchArg::FixedStep => SearchStrategy::FixedStep,
                SearchArg::Exact => SearchStrategy::ExactBreakpoint,
            }),
            trim: b.trim,
            fill_to_budget: b.fill_to_budget,
            tie_break: b.tie.kind(),
            seed,
        },
        ..BalanceRequest::new(mode)
    }
}

fn temporal(t: &TemporalArgs, seed: Option<u64>) -> Result<fairquota::TemporalReport, ServiceError> {
    let cfg = TemporalConfig {
        start_date: t.start,
        end_date: t.end,
        interval_months: t.interval_months,
        label_window_months: t.label_window_months,
        k: t.k,
    };
    let rule = match t.rule {
        RuleArg::MeanMinusLambdaStddev => SelectionRule::MeanMinusLambdaStddev { lambda: t.lambda },
        RuleArg::BestMean => SelectionRule::BestMean,
        RuleArg::MinRegret => SelectionRule::MinRegret,
    };
    let mut loaded = Vec::with_capacity(t.inputs.len());
    for path in &t.inputs {
        let model = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        loaded.push((model, load_cohort(path, t.ingest_config.as_deref())?));
    }
    let sources: Vec<ModelScores<'_>> =
        loaded.iter().map(|(m, c)| ModelScores { default_model: m, cohort: c }).collect();
    let opts = TemporalOptions { tie_break: resolve_tie(t.tie.kind(), seed), lenient: t.lenient };
    run_temporal_eval(&sources, &cfg, rule, opts).map_err(temporal_error)
}

/// Runs one command line. Returns the process exit code: 0 on success,
/// 1 for usage and validation errors, 2 for data errors.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                1
            } else {
                let _ = write!(stdout, "{text}");
                0
            };
        }
    };
    let result = dispatch(&cli, stdin, stderr).and_then(|out| match out {
        Output::Served => Ok(()),
        Output::Text(text) => match &cli.out {
            Some(path) => std::fs::write(path, text)
                .map_err(|e| ServiceError::Unprocessable(format!("cannot write {}: {e}", path.display()))),
            None => stdout.write_all(text.as_bytes()).map_err(|e| ServiceError::Unprocessable(e.to_string())),
        },
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
