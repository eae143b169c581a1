//! Command-line front end: argument parsing, dispatch and report emission.
//!
//! Exit codes: 0 success, 1 validation error, 2 tolerance or contract
//! failure, 64 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::chargaff::{cspr_defect, offset_pair, shift_defect, CountOptions, Involution, KmerMeasure};
use crate::dagger::{
    dagger_aperiodicity, dagger_cylinder, dagger_first_passage, dagger_renewal_convergence,
    dagger_stationarity_defect, sample_dagger, DaggerModel, MarkedCylinder,
};
use crate::error::{Error, Result};
use crate::first_passage::{
    build_Q, first_passage_summary, invariant_vector, is_aperiodic_T, q_period, solve_weights,
};
use crate::io::{
    attach_epsilon, config_hash, config_to_json, parse_epsilon_file, parse_model_config, read_fasta,
    InvalidSymbolPolicy, ParsedModel,
};
use crate::kac::{
    kac_cylinder, perturbed_weights, prefix_defect, renewal_convergence, sample_stationary,
    stationarity_defect_with_budget, total_mass, KacMeasure,
};
use crate::lifted::MarkConstraint;
use crate::model::{ModelSpec, Symbol};
use crate::regeneration::{sample_regenerated, verify_regeneration, DEFAULT_WORD_BUDGET};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_TOLERANCE: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "regionmix", version, about = "Exact analysis and simulation of regenerative region mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SampleMode {
    Regenerated,
    Stationary,
    Dagger,
}

#[derive(Debug, Args)]
struct Common {
    /// Output format (default depends on the command).
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Write output to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated `name=value` tolerance overrides.
    #[arg(long)]
    tolerance_overrides: Option<String>,
    /// Add wall-clock timing to the report.
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Model config (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Acceptance probabilities (JSON object); overrides any in the model file.
    #[arg(long)]
    epsilon: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// First-passage times, Q, weights and aperiodicity.
    Analyze {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Sample a trace.
    Sample {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "regenerated")]
        mode: SampleMode,
        /// Number of symbols.
        #[arg(long, visible_alias = "samples", default_value_t = 1000)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Initial law over the start set (comma-separated); defaults to π̂.
        #[arg(long)]
        gamma: Option<String>,
    },
    /// Exact probability of a cylinder under the stationary law.
    Cylinder {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: Common,
        /// Comma-separated symbol names.
        #[arg(long)]
        word: String,
        /// Per-position mark constraints: any, accept, reject or a:b.
        #[arg(long)]
        marks: Option<String>,
        #[arg(long)]
        pi_perturbed: bool,
    },
    /// Shift-invariance defect over all words up to a length.
    Stationarity {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        max_len: usize,
        #[arg(long, default_value_t = DEFAULT_WORD_BUDGET)]
        budget: usize,
        /// Use normalised weights that are not Q-invariant.
        #[arg(long)]
        pi_perturbed: bool,
    },
    /// d_N = |P_γ(word at N) − P(word)| for N = 0..=n_max.
    Renewal {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        word: String,
        #[arg(long)]
        marks: Option<String>,
        #[arg(long)]
        gamma: Option<String>,
        #[arg(long, default_value_t = 200)]
        n_max: usize,
    },
    /// k-mer tables and reverse-complement parity defects of FASTA input.
    Chargaff {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fasta: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Parity depth (defaults to k).
        #[arg(long)]
        t: Option<usize>,
        /// Shift-defect depth (defaults to max(t − 2, 1)).
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long, default_value = "ACGT")]
        letters: String,
        /// Involution config (JSON); defaults to A↔T, C↔G.
        #[arg(long)]
        involution: Option<PathBuf>,
        #[arg(long)]
        circular: bool,
        /// Reading-frame period of the counted windows.
        #[arg(long, default_value_t = 1)]
        period: usize,
        /// Drop characters outside the alphabet instead of failing.
        #[arg(long)]
        skip_invalid: bool,
        /// Analyse records separately instead of concatenated.
        #[arg(long)]
        separate: bool,
    },
    /// Run the invariant suite on a model.
    Verify {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        depth: usize,
        #[arg(long, default_value_t = 3)]
        max_len: usize,
        #[arg(long, default_value_t = 500)]
        n_max: usize,
    },
}

/// Tolerances applied by the contract checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tolerances {
    pub exact: f64,
    pub normalization: f64,
    pub stationarity: f64,
    pub regeneration: f64,
    pub renewal: f64,
    pub prefix: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            exact: 1e-12,
            normalization: 1e-10,
            stationarity: 1e-9,
            regeneration: 1e-12,
            renewal: 1e-6,
            prefix: 1e-10,
        }
    }
}

impl Tolerances {
    pub fn with_overrides(overrides: Option<&str>) -> Result<Self> {
        let mut t = Self::default();
        let Some(overrides) = overrides else { return Ok(t) };
        for item in overrides.split(',').filter(|s| !s.trim().is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("tolerance override `{item}` is not name=value")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("tolerance `{k}` is not a number")))?;
            if v.is_nan() || v <= 0.0 {
                return Err(Error::InvalidArgument(format!("tolerance `{k}` must be positive")));
            }
            let slot = match k.trim() {
                "exact" => &mut t.exact,
                "normalization" => &mut t.normalization,
                "stationarity" => &mut t.stationarity,
                "regeneration" => &mut t.regeneration,
                "renewal" => &mut t.renewal,
                "prefix" => &mut t.prefix,
                other => return Err(Error::InvalidArgument(format!("unknown tolerance `{other}`"))),
            };
            *slot = v;
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub argv: Vec<String>,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tolerances: Tolerances,
    pub status: String,
    pub results: Value,
    pub diagnostics: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    pub report: Option<Report>,
}

struct Ctx {
    command: &'static str,
    argv: Vec<String>,
    tol: Tolerances,
    format: Format,
    out: Option<PathBuf>,
    timing: Option<Instant>,
}

struct Done {
    hash_input: Value,
    results: Value,
    diagnostics: Value,
    pass: bool,
    seed: Option<u64>,
    /// Raw output for non-JSON formats.
    body: Option<String>,
}

/// Entry point used by the binary: writes to stdout/stderr and returns the
/// exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let outcome = run_command(argv);
    print!("{}", outcome.stdout);
    eprint!("{}", outcome.stderr);
    outcome.exit_code
}

pub fn run_command<I, T>(argv: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let echo: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Outcome {
                    exit_code: EXIT_OK,
                    stdout: text,
                    stderr: String::new(),
                    report: None,
                },
                _ => Outcome {
                    exit_code: EXIT_USAGE,
                    stdout: String::new(),
                    stderr: text,
                    report: None,
                },
            };
        }
    };
    match dispatch(cli.command, echo) {
        Ok(o) => o,
        Err(e) => Outcome {
            exit_code: EXIT_VALIDATION,
            stdout: String::new(),
            stderr: format!("error: {e}\n"),
            report: None,
        },
    }
}

fn ctx(command: &'static str, argv: Vec<String>, common: &Common, default: Format) -> Result<Ctx> {
    Ok(Ctx {
        command,
        argv,
        tol: Tolerances::with_overrides(common.tolerance_overrides.as_deref())?,
        format: common.format.unwrap_or(default),
        out: common.out.clone(),
        timing: common.timing.then(Instant::now),
    })
}

fn dispatch(command: Command, argv: Vec<String>) -> Result<Outcome> {
    let (c, done) = match command {
        Command::Analyze { model, common } => {
            let c = ctx("analyze", argv, &common, Format::Json)?;
            let done = analyze(&c, &load(&model)?)?;
            (c, done)
        }
        Command::Sample {
            model,
            common,
            mode,
            length,
            seed,
            gamma,
        } => {
            let c = ctx("sample", argv, &common, Format::Text)?;
            let done = sample(&c, &load(&model)?, mode, length, seed, gamma.as_deref())?;
            (c, done)
        }
        Command::Cylinder {
            model,
            common,
            word,
            marks,
            pi_perturbed,
        } => {
            let c = ctx("cylinder", argv, &common, Format::Json)?;
            let done = cylinder(&c, &load(&model)?, &word, marks.as_deref(), pi_perturbed)?;
            (c, done)
        }
        Command::Stationarity {
            model,
            common,
            max_len,
            budget,
            pi_perturbed,
        } => {
            let c = ctx("stationarity", argv, &common, Format::Json)?;
            let done = stationarity(&c, &load(&model)?, max_len, budget, pi_perturbed)?;
            (c, done)
        }
        Command::Renewal {
            model,
            common,
            word,
            marks,
            gamma,
            n_max,
        } => {
            let c = ctx("renewal", argv, &common, Format::Csv)?;
            let done = renewal(&c, &load(&model)?, &word, marks.as_deref(), gamma.as_deref(), n_max)?;
            (c, done)
        }
        Command::Chargaff {
            common,
            fasta,
            k,
            t,
            max_len,
            letters,
            involution,
            circular,
            period,
            skip_invalid,
            separate,
        } => {
            let c = ctx("chargaff", argv, &common, Format::Json)?;
            let opts = ChargaffOpts {
                k,
                t: t.unwrap_or(k),
                max_len,
                letters: letters.chars().collect(),
                involution,
                circular,
                period,
                skip_invalid,
                separate,
            };
            let done = chargaff(&c, &fasta, &opts)?;
            (c, done)
        }
        Command::Verify {
            model,
            common,
            depth,
            max_len,
            n_max,
        } => {
            let c = ctx("verify", argv, &common, Format::Json)?;
            let done = verify(&c, &load(&model)?, depth, max_len, n_max)?;
            (c, done)
        }
    };
    finish(c, done)
}

fn finish(c: Ctx, done: Done) -> Result<Outcome> {
    let hash = config_hash(&json!({
        "command": c.command,
        "input": done.hash_input,
        "tolerances": c.tol,
    }));
    let report = Report {
        command: c.command.to_string(),
        argv: c.argv.clone(),
        config_hash: hash,
        seed: done.seed,
        tolerances: c.tol.clone(),
        status: if done.pass { "ok" } else { "tolerance_failure" }.to_string(),
        results: done.results,
        diagnostics: done.diagnostics,
        timing_ms: c.timing.map(|t| t.elapsed().as_secs_f64() * 1e3),
    };
    let text = match (c.format, done.body) {
        (Format::Json, _) | (_, None) => {
            let mut s = serde_json::to_string_pretty(&report).expect("report serialises");
            s.push('\n');
            s
        }
        (_, Some(body)) => body,
    };
    let stdout = match &c.out {
        Some(path) => {
            std::fs::write(path, &text).map_err(|e| Error::InvalidArgument(format!("cannot write {}: {e}", path.display())))?;
            String::new()
        }
        None => text,
    };
    let exit_code = if done.pass { EXIT_OK } else { EXIT_TOLERANCE };
    let stderr = if done.pass {
        String::new()
    } else {
        format!("{}: tolerance check failed\n", c.command)
    };
    Ok(Outcome {
        exit_code,
        stdout,
        stderr,
        report: Some(report),
    })
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn load(args: &ModelArgs) -> Result<ParsedModel> {
    let mut parsed = parse_model_config(&read_file(&args.model)?)?;
    if let Some(p) = &args.epsilon {
        let eps = parse_epsilon_file(&read_file(p)?)?;
        parsed.dagger = Some(attach_epsilon(&parsed.model, &eps)?);
        parsed.epsilon = Some(eps);
    }
    Ok(parsed)
}

fn model_hash_input(p: &ParsedModel) -> Value {
    config_to_json(&p.config, p.epsilon.as_ref())
}

fn names(model: &ModelSpec, word: &[Symbol]) -> Vec<String> {
    model.alphabet().render_word(word)
}

/// Comma-separated names; without commas, one character per symbol when
/// every character is a symbol name.
fn parse_word(model: &ModelSpec, text: &str) -> Result<Vec<Symbol>> {
    let text = text.trim();
    if text.is_empty() {
        return Err(Error::EmptyWord);
    }
    if text.contains(',') {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        return model.alphabet().parse_word(&parts);
    }
    if let Ok(s) = model.symbol(text) {
        return Ok(vec![s]);
    }
    let chars: Vec<String> = text.chars().map(String::from).collect();
    model.alphabet().parse_word(&chars)
}

fn parse_marks(text: &str) -> Result<Vec<MarkConstraint>> {
    text.split(',')
        .map(|m| {
            let m = m.trim();
            Ok(match m.to_ascii_lowercase().as_str() {
                "any" => MarkConstraint::Any,
                "accept" => MarkConstraint::Accept,
                "reject" => MarkConstraint::Reject,
                other => {
                    let (a, b) = other
                        .split_once(':')
                        .ok_or_else(|| Error::InvalidArgument(format!("bad mark constraint `{m}`")))?;
                    let parse = |x: &str| {
                        x.parse::<f64>()
                            .map_err(|_| Error::InvalidArgument(format!("bad mark constraint `{m}`")))
                    };
                    MarkConstraint::Interval(parse(a)?, parse(b)?)
                }
            })
        })
        .collect()
}

fn parse_vector(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("`{x}` is not a number")))
        })
        .collect()
}

fn named_map(model: &ModelSpec, values: &[f64]) -> BTreeMap<String, f64> {
    model
        .start_set()
        .iter()
        .zip(values)
        .map(|(&s, &v)| (model.name(s).to_string(), v))
        .collect()
}

fn kac_for(p: &ParsedModel, perturbed: bool) -> Result<KacMeasure> {
    let base = match &p.dagger {
        Some(dm) => dm.kac()?,
        None => KacMeasure::new(&p.model)?,
    };
    if !perturbed {
        return Ok(base);
    }
    let pi = perturbed_weights(&base.weights().pi, base.expected_times());
    match &p.dagger {
        Some(dm) => dm.kac_with_weights(&pi),
        None => KacMeasure::with_weights(&p.model, &pi),
    }
}

fn weights_json(model: &ModelSpec, km: &KacMeasure) -> Value {
    json!({
        "pi": named_map(model, &km.weights().pi),
        "normalization_residual": km.weights().normalization_residual,
        "invariance_residual": km.weights().invariance_residual,
    })
}

fn analyze(c: &Ctx, p: &ParsedModel) -> Result<Done> {
    let m = &p.model;
    let summary = first_passage_summary(m)?;
    let q = build_Q(m)?;
    let inv = invariant_vector(&q);
    let w = solve_weights(m)?;
    let t_ap = is_aperiodic_T(m, &inv.pi_hat)?;
    let expected = named_map(m, &summary.expected_times());
    let mut results = json!({
        "start_set": names(m, m.start_set()),
        "expected_t": expected,
        "q": q.rows,
        "pi_hat": named_map(m, &inv.pi_hat),
        "pi": named_map(m, &w.pi),
        "t_gcd": t_ap.gcd,
        "t_aperiodic": t_ap.aperiodic,
        "q_period": q_period(&q),
    });
    let mut pass = w.normalization_residual <= c.tol.exact && w.invariance_residual <= c.tol.exact;
    let mut diagnostics = json!({
        "normalization_residual": w.normalization_residual,
        "invariance_residual": w.invariance_residual,
        "q_row_defect": q.max_row_defect(),
        "unique_invariant_vector": inv.unique,
        "transient_spectral_radius": named_map(m, &summary.entries.iter().map(|e| e.transient_spectral_radius).collect::<Vec<_>>()),
    });
    if let Some(dm) = &p.dagger {
        let fp = dagger_first_passage(dm)?;
        let inv_d = invariant_vector(&fp.q);
        let km = dm.kac()?;
        let wd = km.weights();
        let ap = dagger_aperiodicity(dm, &inv_d.pi_hat)?;
        results["dagger"] = json!({
            "epsilon": named_map(m, &dm.epsilons()),
            "expected_t": named_map(m, &fp.summary.expected_times()),
            "q": fp.q.rows,
            "pi_hat": named_map(m, &inv_d.pi_hat),
            "pi": named_map(m, &wd.pi),
            "t_gcd": ap.gcd,
            "q_period": q_period(&fp.q),
        });
        diagnostics["dagger"] = json!({
            "normalization_residual": wd.normalization_residual,
            "invariance_residual": wd.invariance_residual,
        });
        pass &= wd.normalization_residual <= c.tol.exact && wd.invariance_residual <= c.tol.exact;
    }
    Ok(Done {
        hash_input: model_hash_input(p),
        results,
        diagnostics,
        pass,
        seed: None,
        body: None,
    })
}

fn default_gamma(p: &ParsedModel) -> Result<Vec<f64>> {
    let q = match &p.dagger {
        Some(dm) => dagger_first_passage(dm)?.q,
        None => build_Q(&p.model)?,
    };
    Ok(invariant_vector(&q).pi_hat)
}

fn sample(c: &Ctx, p: &ParsedModel, mode: SampleMode, length: usize, seed: u64, gamma: Option<&str>) -> Result<Done> {
    let m = &p.model;
    let gamma = match gamma {
        Some(g) => parse_vector(g)?,
        None => default_gamma(p)?,
    };
    let hash_input = json!({"model": model_hash_input(p), "seed": seed, "length": length, "gamma": gamma, "mode": format!("{mode:?}")});
    let (results, body) = match mode {
        SampleMode::Regenerated => {
            let tr = sample_regenerated(m, &gamma, length, seed)?;
            let csv = {
                let mut s = String::from("index,symbol,governing,is_regen\n");
                for line in tr.to_text(m).lines() {
                    s.push_str(&line.replace(' ', ","));
                    s.push('\n');
                }
                s
            };
            let body = if c.format == Format::Csv { csv } else { tr.to_text(m) };
            let results = json!({
                "symbols": names(m, &tr.symbols),
                "governing": names(m, &tr.governing),
                "regen_times": tr.regen_times,
                "start_symbols": names(m, &tr.start_symbols),
            });
            (results, body)
        }
        SampleMode::Dagger => {
            let dm: &DaggerModel = p
                .dagger
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("dagger sampling needs acceptance probabilities (--epsilon)".into()))?;
            let tr = sample_dagger(dm, &gamma, length, seed)?;
            let text = tr.to_text(m);
            let body = if c.format == Format::Csv {
                let mut s = String::from("index,symbol,z_value,governing,is_regen\n");
                for line in text.lines() {
                    s.push_str(&line.replace(' ', ","));
                    s.push('\n');
                }
                s
            } else {
                text
            };
            let results = json!({
                "symbols": names(m, &tr.symbols),
                "z_values": tr.z_values,
                "accept_flags": tr.accept_flags,
                "governing": names(m, &tr.governing),
                "regen_times": tr.regen_times,
            });
            (results, body)
        }
        SampleMode::Stationary => {
            let km = kac_for(p, false)?;
            let xs = sample_stationary(&km, length, seed)?;
            let mut body = String::new();
            if c.format == Format::Csv {
                body.push_str("index,symbol\n");
            }
            let sep = if c.format == Format::Csv { "," } else { " " };
            for (i, &x) in xs.iter().enumerate() {
                let _ = writeln!(body, "{i}{sep}{}", m.name(x));
            }
            (json!({ "symbols": names(m, &xs) }), body)
        }
    };
    Ok(Done {
        hash_input,
        results,
        diagnostics: json!({ "gamma": named_map(m, &gamma) }),
        pass: true,
        seed: Some(seed),
        body: Some(body),
    })
}

fn cylinder(c: &Ctx, p: &ParsedModel, word: &str, marks: Option<&str>, perturbed: bool) -> Result<Done> {
    let m = &p.model;
    let w = parse_word(m, word)?;
    let km = kac_for(p, perturbed)?;
    let marks = marks.map(parse_marks).transpose()?;
    let prob = match &marks {
        Some(mk) => dagger_cylinder(&km, &MarkedCylinder::new(w.clone(), mk.clone())?)?,
        None => kac_cylinder(&km, &w)?,
    };
    let _ = c;
    Ok(Done {
        hash_input: json!({"model": model_hash_input(p), "word": names(m, &w), "marks": marks, "perturbed": perturbed}),
        results: json!({
            "word": names(m, &w),
            "marks": marks,
            "probability": prob,
        }),
        diagnostics: json!({
            "series_terms": km.series_terms(),
            "tail_bound": km.tail_bound(),
            "weights": weights_json(m, &km),
        }),
        pass: true,
        seed: None,
        body: None,
    })
}

fn stationarity(c: &Ctx, p: &ParsedModel, max_len: usize, budget: usize, perturbed: bool) -> Result<Done> {
    let m = &p.model;
    let km = kac_for(p, perturbed)?;
    let report = match &p.dagger {
        Some(_) if budget == DEFAULT_WORD_BUDGET => dagger_stationarity_defect(&km, max_len)?,
        Some(_) => crate::kac::defect_sweep(&km, max_len, budget, true)?,
        None => stationarity_defect_with_budget(&km, max_len, budget)?,
    };
    let pass = report.defect <= c.tol.stationarity && !report.partial;
    Ok(Done {
        hash_input: json!({"model": model_hash_input(p), "max_len": max_len, "budget": budget, "perturbed": perturbed}),
        results: json!({
            "defect": report.defect,
            "argmax_word": names(m, &report.argmax_word),
            "argmax_marks": report.argmax_marks,
            "offset0": report.offset0,
            "offset1": report.offset1,
        }),
        diagnostics: json!({
            "words_checked": report.words_checked,
            "partial": report.partial,
            "weights": weights_json(m, &km),
            "series_terms": km.series_terms(),
            "tail_bound": km.tail_bound(),
        }),
        pass,
        seed: None,
        body: None,
    })
}

fn renewal(c: &Ctx, p: &ParsedModel, word: &str, marks: Option<&str>, gamma: Option<&str>, n_max: usize) -> Result<Done> {
    let m = &p.model;
    let w = parse_word(m, word)?;
    let km = kac_for(p, false)?;
    let gamma = match gamma {
        Some(g) => parse_vector(g)?,
        None => default_gamma(p)?,
    };
    let marks = marks.map(parse_marks).transpose()?;
    let series = match &marks {
        Some(mk) => dagger_renewal_convergence(&km, &gamma, &MarkedCylinder::new(w.clone(), mk.clone())?, n_max)?,
        None => renewal_convergence(&km, &gamma, &w, n_max)?,
    };
    Ok(Done {
        hash_input: json!({"model": model_hash_input(p), "word": names(m, &w), "marks": marks, "gamma": gamma, "n_max": n_max}),
        results: json!({
            "limit": series.limit,
            "d": series.d,
            "first_below_tolerance": series.first_below(c.tol.renewal),
        }),
        diagnostics: json!({
            "gamma": named_map(m, &gamma),
            "parity_tails": series.parity_tails(),
        }),
        pass: true,
        seed: None,
        body: Some(series.to_csv()),
    })
}

struct ChargaffOpts {
    k: usize,
    t: usize,
    max_len: Option<usize>,
    letters: Vec<char>,
    involution: Option<PathBuf>,
    circular: bool,
    period: usize,
    skip_invalid: bool,
    separate: bool,
}

fn chargaff(c: &Ctx, fasta: &Path, o: &ChargaffOpts) -> Result<Done> {
    let text = read_file(fasta)?;
    let policy = if o.skip_invalid {
        InvalidSymbolPolicy::Skip
    } else {
        InvalidSymbolPolicy::Reject
    };
    let records = read_fasta(text.as_bytes(), &o.letters, policy)?;
    if records.is_empty() {
        return Err(Error::Fasta {
            record: 0,
            offset: 0,
            message: "no records".into(),
        });
    }
    let phi = match &o.involution {
        Some(p) => Involution::from_json(&read_file(p)?)?,
        None => Involution::dna(),
    };
    if phi.letters() != o.letters.as_slice() {
        return Err(Error::InvalidInvolution("involution alphabet differs from --letters".into()));
    }
    let max_len = o.max_len.unwrap_or(o.t.saturating_sub(2).max(1));
    let groups: Vec<(String, String)> = if o.separate {
        records.iter().map(|r| (r.header.clone(), r.sequence.clone())).collect()
    } else {
        let joined = records.iter().map(|r| r.sequence.as_str()).collect::<String>();
        vec![("all".to_string(), joined)]
    };
    let opts = CountOptions {
        circular: o.circular,
        period: o.period,
        offset: 0,
    };
    let mut per_record = Vec::new();
    let mut csv = String::new();
    for (header, seq) in &groups {
        let idx = crate::chargaff::encode_sequence(seq, &o.letters)?;
        let (m0, m1) = offset_pair(&idx, &o.letters, o.k, opts)?;
        let cspr = cspr_defect(&m0, &phi, o.t)?;
        let shift = shift_defect(&m0, &m1, max_len)?;
        let band = 2.0 * o.t as f64 / KmerMeasure::sample_size(&m0) as f64;
        if o.separate {
            let _ = writeln!(csv, "# {header}");
        }
        csv.push_str(&m0.to_csv());
        per_record.push(json!({
            "record": header,
            "length": seq.len(),
            "cspr_defect": cspr.defect,
            "cspr_argmax": cspr.argmax,
            "cspr_partner": cspr.partner,
            "shift_defect": shift.defect,
            "shift_argmax": shift.argmax,
            "shift_max_len": max_len,
            "edge_band": band,
        }));
    }
    let skipped: usize = records.iter().map(|r| r.skipped).sum();
    Ok(Done {
        hash_input: json!({
            "fasta_sha256": config_hash(&Value::String(text.clone())),
            "k": o.k, "t": o.t, "max_len": max_len,
            "letters": o.letters.iter().collect::<String>(),
            "circular": o.circular, "period": o.period,
            "skip_invalid": o.skip_invalid, "separate": o.separate,
        }),
        results: json!({ "records": per_record }),
        diagnostics: json!({
            "record_lengths": records.iter().map(|r| r.sequence.len()).collect::<Vec<_>>(),
            "skipped_symbols": skipped,
        }),
        pass: true,
        seed: None,
        body: (c.format != Format::Json).then_some(csv),
    })
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    value: Option<f64>,
    tolerance: f64,
    pass: bool,
    note: String,
}

fn check(name: &'static str, value: f64, tolerance: f64) -> Check {
    Check {
        name,
        value: Some(value),
        tolerance,
        pass: value <= tolerance,
        note: String::new(),
    }
}

fn verify(c: &Ctx, p: &ParsedModel, depth: usize, max_len: usize, n_max: usize) -> Result<Done> {
    let m = &p.model;
    let tol = &c.tol;
    let mut checks = Vec::new();
    let km = KacMeasure::new(m)?;
    checks.push(check("q_row_sums", km.q().max_row_defect(), tol.exact));
    checks.push(check("normalization_residual", km.weights().normalization_residual, tol.exact));
    checks.push(check("invariance_residual", km.weights().invariance_residual, tol.exact));
    checks.push(check("total_mass", (total_mass(&km) - 1.0).abs(), tol.normalization));
    checks.push(check("prefix_consistency", prefix_defect(&km, max_len), tol.prefix));
    let st = stationarity_defect_with_budget(&km, max_len, DEFAULT_WORD_BUDGET)?;
    checks.push(check("stationarity_defect", st.defect, tol.stationarity));
    let reg = verify_regeneration(m, depth, DEFAULT_WORD_BUDGET)?;
    checks.push(check("regeneration_factorization", reg.max_defect(), tol.regeneration));
    let pi_hat = invariant_vector(km.q()).pi_hat;
    checks.push(renewal_check(&km, &pi_hat, is_aperiodic_T(m, &pi_hat)?.aperiodic, n_max, tol.renewal, |g, w| {
        renewal_convergence(&km, g, w, n_max)
    })?);
    if let Some(dm) = &p.dagger {
        let kd = dm.kac()?;
        checks.push(check("dagger_normalization_residual", kd.weights().normalization_residual, tol.exact));
        checks.push(check("dagger_invariance_residual", kd.weights().invariance_residual, tol.exact));
        checks.push(check("dagger_total_mass", (total_mass(&kd) - 1.0).abs(), tol.normalization));
        let sd = dagger_stationarity_defect(&kd, max_len)?;
        checks.push(check("dagger_stationarity_defect", sd.defect, tol.stationarity));
        let ph = invariant_vector(kd.q()).pi_hat;
        let ap = dagger_aperiodicity(dm, &ph)?.aperiodic;
        let mut rc = renewal_check(&kd, &ph, ap, n_max, tol.renewal, |g, w| {
            dagger_renewal_convergence(&kd, g, &MarkedCylinder::unconstrained(w.to_vec()), n_max)
        })?;
        rc.name = "dagger_renewal_limit";
        checks.push(rc);
    }
    let pass = checks.iter().all(|ch| ch.pass);
    Ok(Done {
        hash_input: json!({"model": model_hash_input(p), "depth": depth, "max_len": max_len, "n_max": n_max}),
        results: json!({ "checks": checks }),
        diagnostics: json!({
            "regeneration_words": reg.words_checked,
            "regeneration_partial": reg.partial,
            "stationarity_argmax": names(m, &st.argmax_word),
        }),
        pass,
        seed: None,
        body: None,
    })
}

/// Under T-aperiodicity with γ = π̂, every single-symbol cylinder must get
/// within tolerance of its limit by `n_max`.
fn renewal_check<F>(km: &KacMeasure, pi_hat: &[f64], aperiodic: bool, n_max: usize, tol: f64, run: F) -> Result<Check>
where
    F: Fn(&[f64], &[Symbol]) -> Result<crate::kac::RenewalSeries>,
{
    if !aperiodic {
        return Ok(Check {
            name: "renewal_limit",
            value: None,
            tolerance: tol,
            pass: true,
            note: "skipped: law of T is periodic".into(),
        });
    }
    let mut worst: f64 = 0.0;
    for i in 0..km.model().n_symbols() {
        let s = run(pi_hat, &[i])?;
        let best = s.d.iter().copied().fold(f64::INFINITY, f64::min);
        worst = worst.max(best);
    }
    Ok(Check {
        name: "renewal_limit",
        value: Some(worst),
        tolerance: tol,
        pass: worst < tol,
        note: format!("min over N <= {n_max} of d_N, worst symbol"),
    })
}
