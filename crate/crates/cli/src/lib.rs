//! The `c2al` command-line harness: generate → train baseline → discover →
//! train C2AL → evaluate → analyze, all driven by one JSON config.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use c2al_core::cohorts::{DivergenceMetric, DivergenceReport};
use c2al_core::experiment::{self, ExperimentConfig};
use c2al_core::metrics::{attention_stats, compare_stats, symmetric_histogram, NEReport, StepStats};
use c2al_core::model::{load_checkpoint, save_checkpoint, ModelParams};
use c2al_core::svg::{bar_chart, histogram_chart, line_chart, Series};
use c2al_core::synthdata::{read_dataset_with_hash, write_dataset_tagged, CohortSpec, Dataset};
use c2al_core::trainer::stats_csv;
use c2al_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const OUTPUT_DIR_ENV: &str = "C2AL_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "c2al", version, about = "Cohort-contrastive auxiliary learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset and its PLR summary.
    Gen(ConfigArg),
    /// Train the baseline or the C2AL model.
    Train(TrainArgs),
    /// Select the head/tail cohort pair from baseline predictions.
    Discover(DiscoverArgs),
    /// Per-segment NE on the held-out split, optionally against a baseline.
    Eval(EvalArgs),
    /// Attention-weight statistics and plots for two snapshot series.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("variant").required(true).args(["baseline", "c2al"])))]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub baseline: bool,
    #[arg(long)]
    pub c2al: bool,
    /// Discovery report supplying the head/tail cohorts for --c2al.
    #[arg(long)]
    pub cohort_report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Baseline checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Overrides the config's selection metric.
    #[arg(long)]
    pub metric: Option<DivergenceMetric>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Baseline checkpoint for NE_diff columns.
    #[arg(long)]
    pub against: Option<PathBuf>,
    /// Head/tail cohorts for the summary row.
    #[arg(long)]
    pub cohort_report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Snapshot directory of the reference run.
    #[arg(long)]
    pub snapshots: PathBuf,
    /// Snapshot directory of the run compared against it.
    #[arg(long)]
    pub against: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite { .. } | Error::UndefinedNe(_) | Error::Degenerate(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

pub fn execute(cmd: &Command) -> c2al_core::Result<()> {
    match cmd {
        Command::Gen(a) => cmd_gen(&a.config),
        Command::Train(a) => cmd_train(&a.config.config, a.c2al, a.cohort_report.as_deref()),
        Command::Discover(a) => cmd_discover(&a.config.config, &a.checkpoint, a.metric),
        Command::Eval(a) => cmd_eval(&a.config.config, &a.checkpoint, a.against.as_deref(), a.cohort_report.as_deref()),
        Command::Analyze(a) => cmd_analyze(&a.config.config, &a.snapshots, &a.against),
    }
}

/// Loads a config and applies the output-directory override.
pub fn load_config(path: &Path) -> c2al_core::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
        cfg.output_dir = PathBuf::from(dir);
    }
    Ok(cfg)
}

fn mkdir(dir: &Path) -> c2al_core::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> c2al_core::Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> c2al_core::Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Tags an SVG with the config hash. A comment after the XML declaration
/// keeps the document well-formed.
fn tag_svg(svg: String, hash: &str) -> String {
    match svg.split_once('\n') {
        Some((decl, rest)) => format!("{decl}\n<!-- config_hash: {hash} -->\n{rest}"),
        None => svg,
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    variant: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cohorts: Option<&'a CohortSpec>,
    files: Vec<String>,
}

pub fn dataset_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("dataset.jsonl")
}

pub fn cmd_gen(config: &Path) -> c2al_core::Result<()> {
    let cfg = load_config(config)?;
    let data = experiment::gen_dataset(&cfg)?;
    mkdir(&cfg.output_dir)?;
    let hash = cfg.config_hash();
    let path = dataset_path(&cfg);
    write_dataset_tagged(&data, &path, Some(&hash))?;
    let mut csv = String::from("segment,count,positives,plr\n");
    for (seg, s) in data.summary() {
        csv.push_str(&format!("{seg},{},{},{:.10}\n", s.count, s.positives, s.plr));
    }
    write_text(&cfg.output_dir.join("plr_summary.csv"), &csv)?;
    println!("wrote {} ({} samples)", path.display(), data.len());
    print!("{csv}");
    Ok(())
}

/// Reads the dataset for `cfg`, refusing one generated from different
/// generator settings.
pub fn load_dataset(cfg: &ExperimentConfig) -> c2al_core::Result<Dataset> {
    let path = dataset_path(cfg);
    if !path.exists() {
        return Err(Error::config(format!("{} not found; run `c2al gen` first", path.display())));
    }
    let (data, _) = read_dataset_with_hash(&path)?;
    if data.config != cfg.resolved().gen {
        return Err(Error::config(format!(
            "{} was generated with different generator settings",
            path.display()
        )));
    }
    Ok(data)
}

fn cohorts_from_report(cfg: &ExperimentConfig, path: &Path) -> c2al_core::Result<CohortSpec> {
    let report = DivergenceReport::read(path)?;
    let spec = cfg.spec_for(report.head, report.tail);
    spec.validate()?;
    Ok(spec)
}

pub fn run_dir(cfg: &ExperimentConfig, c2al: bool) -> PathBuf {
    cfg.output_dir.join(if c2al { "c2al" } else { "baseline" })
}

pub fn cmd_train(config: &Path, c2al: bool, cohort_report: Option<&Path>) -> c2al_core::Result<()> {
    let cfg = load_config(config)?;
    let cohorts = if c2al {
        let spec = match (cohort_report, cfg.explicit_cohorts()) {
            (Some(path), _) => cohorts_from_report(&cfg, path)?,
            (None, Some(spec)) => spec,
            (None, None) => {
                return Err(Error::config(
                    "--c2al needs --cohort-report or explicit cohorts.head/cohorts.tail in the config",
                ))
            }
        };
        Some(spec)
    } else {
        None
    };
    let data = load_dataset(&cfg)?;
    let out = experiment::train_variant(&cfg, &data, cohorts.as_ref())?;
    let dir = run_dir(&cfg, c2al);
    mkdir(&dir)?;
    save_checkpoint(&out.params, &dir.join("final.c2al"))?;
    write_text(&dir.join("log.csv"), &out.log_csv())?;
    out.snapshots.write_dir(&dir.join("snapshots"))?;
    let manifest = Manifest {
        command: "train",
        config_hash: cfg.config_hash(),
        variant: Some(if c2al { "c2al" } else { "baseline" }),
        cohorts: cohorts.as_ref(),
        files: vec!["final.c2al".into(), "log.csv".into(), "snapshots/".into()],
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    let last = out.log.last();
    println!(
        "trained {} for {} steps; final batch loss {:.6}; wrote {}",
        manifest.variant.unwrap_or_default(),
        out.log.len(),
        last.map_or(f64::NAN, |r| r.loss.total),
        dir.display()
    );
    Ok(())
}

fn load_params(path: &Path) -> c2al_core::Result<ModelParams> {
    if !path.exists() {
        return Err(Error::config(format!("checkpoint {} not found", path.display())));
    }
    load_checkpoint(path)
}

pub fn cmd_discover(config: &Path, checkpoint: &Path, metric: Option<DivergenceMetric>) -> c2al_core::Result<()> {
    let cfg = load_config(config)?;
    let params = load_params(checkpoint)?;
    let data = load_dataset(&cfg)?;
    let metric = metric.unwrap_or(cfg.cohorts.metric);
    mkdir(&cfg.output_dir)?;
    let all_dir = cfg.output_dir.join("cohort_reports");
    mkdir(&all_dir)?;
    let mut selected = None;
    for m in DivergenceMetric::ALL {
        let report = experiment::discover_cohorts(&cfg, &data, &params, m)?;
        report.write(&all_dir.join(format!("{m}.json")))?;
        if m == metric {
            selected = Some(report);
        }
    }
    let report = selected.expect("selected metric is one of ALL");
    let path = cfg.output_dir.join("cohort_report.json");
    report.write(&path)?;
    let p = &report.pair_metrics;
    println!(
        "{metric}: head {} tail {} (kl {:.6}/{:.6}, js {:.6}, w1 {:.6}, cos {:.6}); wrote {}",
        report.head,
        report.tail,
        p.kl_head_tail,
        p.kl_tail_head,
        p.js_distance,
        p.wasserstein1,
        p.cosine_similarity,
        path.display()
    );
    Ok(())
}

/// Run name of a checkpoint: its file stem, prefixed by the directory name
/// for `final.c2al`.
fn run_name(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    match path.parent().and_then(Path::file_name).and_then(|s| s.to_str()) {
        Some(dir) if stem == "final" => dir.to_string(),
        _ => stem.to_string(),
    }
}

fn eval_cohorts(cfg: &ExperimentConfig, report: Option<&Path>) -> c2al_core::Result<Option<CohortSpec>> {
    if let Some(path) = report {
        return cohorts_from_report(cfg, path).map(Some);
    }
    if let Some(spec) = cfg.explicit_cohorts() {
        return Ok(Some(spec));
    }
    let default = cfg.output_dir.join("cohort_report.json");
    if default.exists() {
        return cohorts_from_report(cfg, &default).map(Some);
    }
    Ok(None)
}

pub fn cmd_eval(
    config: &Path,
    checkpoint: &Path,
    against: Option<&Path>,
    cohort_report: Option<&Path>,
) -> c2al_core::Result<()> {
    let cfg = load_config(config)?;
    let data = load_dataset(&cfg)?;
    let cohorts = eval_cohorts(&cfg, cohort_report)?;
    let params = load_params(checkpoint)?;
    let name = run_name(checkpoint);
    let dir = cfg.output_dir.join("eval");
    mkdir(&dir)?;
    let baseline = match against {
        Some(path) => {
            let b = load_params(path)?;
            Some(experiment::evaluate(&cfg, &data, &run_name(path), &b, None, cohorts.as_ref())?)
        }
        None => None,
    };
    let report = experiment::evaluate(&cfg, &data, &name, &params, baseline.as_ref(), cohorts.as_ref())?;
    let stem = match &baseline {
        Some(b) => format!("ne_{}_vs_{}", report.name, b.name),
        None => format!("ne_{}", report.name),
    };
    report.write_json(&dir.join(format!("{stem}.json")))?;
    write_text(&dir.join(format!("{stem}.csv")), &report.to_csv())?;
    let hash = cfg.config_hash();
    write_text(&dir.join(format!("{stem}.svg")), &tag_svg(ne_chart(&report), &hash))?;
    print_ne_summary(&report);
    println!("wrote {}", dir.join(format!("{stem}.json")).display());
    Ok(())
}

fn ne_chart(report: &NEReport) -> String {
    let ids: Vec<String> = report.segments.keys().map(u32::to_string).collect();
    if report.baseline.is_some() {
        let diffs = report
            .segments
            .values()
            .map(|s| s.ne_diff.map_or(f64::NAN, |d| 100.0 * d))
            .collect();
        bar_chart(
            &format!("NE_diff per segment, {} vs {}", report.name, report.baseline.as_deref().unwrap_or("")),
            "NE_diff (%)",
            &ids,
            &[Series::new(report.name.clone(), diffs)],
        )
    } else {
        let ne = report.segments.values().map(|s| s.ne.unwrap_or(f64::NAN)).collect();
        bar_chart(
            &format!("NE per segment, {}", report.name),
            "NE",
            &ids,
            &[Series::new(report.name.clone(), ne)],
        )
    }
}

fn print_ne_summary(report: &NEReport) {
    let pct = |v: Option<f64>| v.map_or("undefined".to_string(), |d| format!("{:+.4}%", 100.0 * d));
    match &report.ne_diff {
        Some(d) => println!(
            "{} vs {}: Overall NE_diff {} | Head NE_diff {} | Tail NE_diff {}",
            report.name,
            report.baseline.as_deref().unwrap_or(""),
            pct(d.overall),
            pct(d.head),
            pct(d.tail)
        ),
        None => println!(
            "{}: overall NE {}",
            report.name,
            report.overall.ne.map_or("undefined".into(), |v| format!("{v:.6}"))
        ),
    }
}

/// Snapshot checkpoints of a directory, ordered by step.
pub fn read_snapshot_dir(dir: &Path) -> c2al_core::Result<Vec<(usize, ModelParams)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut steps = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(step) = name
            .to_str()
            .and_then(|n| n.strip_prefix("step_"))
            .and_then(|n| n.strip_suffix(".c2al"))
            .and_then(|n| n.parse::<usize>().ok())
        else {
            continue;
        };
        steps.push((step, entry.path()));
    }
    if steps.is_empty() {
        return Err(Error::config(format!("no step_<N>.c2al snapshots in {}", dir.display())));
    }
    steps.sort();
    steps
        .into_iter()
        .map(|(s, p)| Ok((s, load_checkpoint(&p)?)))
        .collect()
}

pub fn cmd_analyze(config: &Path, dir_a: &Path, dir_b: &Path) -> c2al_core::Result<()> {
    let cfg = load_config(config)?;
    let (tau, bins, range) = (cfg.eval.tau, cfg.eval.bins, cfg.eval.range);
    let a = read_snapshot_dir(dir_a)?;
    let b = read_snapshot_dir(dir_b)?;
    let stats = |series: &[(usize, ModelParams)]| -> c2al_core::Result<Vec<StepStats>> {
        series
            .iter()
            .map(|(step, p)| {
                Ok(StepStats {
                    step: *step,
                    stats: attention_stats(p.attention(), tau, bins, range)?,
                })
            })
            .collect()
    };
    let (sa, sb) = (stats(&a)?, stats(&b)?);
    let comparison = compare_stats(&sa, &sb)?;
    let out = cfg.output_dir.join("analysis");
    mkdir(&out)?;
    let hash = cfg.config_hash();
    let (name_a, name_b) = (series_name(dir_a, "a"), series_name(dir_b, "b"));
    write_text(&out.join("stats_a.csv"), &stats_csv(&sa))?;
    write_text(&out.join("stats_b.csv"), &stats_csv(&sb))?;
    write_text(&out.join("comparison.csv"), &comparison.to_csv())?;
    #[derive(Serialize)]
    struct Summary<'a> {
        config_hash: &'a str,
        a: &'a str,
        b: &'a str,
        tau: f64,
        bins: usize,
        range: f64,
        entropy_higher: bool,
        sparsity_lower: bool,
        rows: &'a [c2al_core::metrics::ComparisonRow],
    }
    write_json(
        &out.join("comparison.json"),
        &Summary {
            config_hash: &hash,
            a: &name_a,
            b: &name_b,
            tau,
            bins,
            range,
            entropy_higher: comparison.entropy_higher,
            sparsity_lower: comparison.sparsity_lower,
            rows: &comparison.rows,
        },
    )?;

    let mut files = vec![
        "stats_a.csv".to_string(),
        "stats_b.csv".into(),
        "comparison.csv".into(),
        "comparison.json".into(),
    ];
    // Per-snapshot overlays share one range so the two runs are comparable.
    for ((step, pa), (_, pb)) in a.iter().zip(&b) {
        let (ya, yb) = (pa.attention(), pb.attention());
        let range = ya.max_abs().max(yb.max_abs());
        let svg = histogram_chart(
            &format!("Attention weights at step {step}"),
            -range,
            range,
            &[
                Series::new(name_a.clone(), symmetric_histogram(ya.as_slice(), range, bins)),
                Series::new(name_b.clone(), symmetric_histogram(yb.as_slice(), range, bins)),
            ],
        );
        let file = format!("hist_step_{step}.svg");
        write_text(&out.join(&file), &tag_svg(svg, &hash))?;
        files.push(file);
    }
    let ((_, fa), (_, fb)) = (a.last().expect("nonempty"), b.last().expect("nonempty"));
    let range = fa.attention().max_abs().max(fb.attention().max_abs());
    let overlay = histogram_chart(
        "Final attention weight distribution",
        -range,
        range,
        &[
            Series::new(name_a.clone(), symmetric_histogram(fa.attention().as_slice(), range, bins)),
            Series::new(name_b.clone(), symmetric_histogram(fb.attention().as_slice(), range, bins)),
        ],
    );
    write_text(&out.join("final_overlay.svg"), &tag_svg(overlay, &hash))?;
    let steps: Vec<f64> = comparison.rows.iter().map(|r| r.step as f64).collect();
    let entropy = line_chart(
        "Attention histogram entropy",
        "step",
        "entropy (bits)",
        &steps,
        &[
            Series::new(name_a.clone(), comparison.rows.iter().map(|r| r.entropy_a).collect()),
            Series::new(name_b.clone(), comparison.rows.iter().map(|r| r.entropy_b).collect()),
        ],
    );
    write_text(&out.join("entropy.svg"), &tag_svg(entropy, &hash))?;
    let near_zero = line_chart(
        &format!("Near-zero fraction (tau = {tau})"),
        "step",
        "fraction",
        &steps,
        &[
            Series::new(name_a.clone(), comparison.rows.iter().map(|r| r.near_zero_a).collect()),
            Series::new(name_b.clone(), comparison.rows.iter().map(|r| r.near_zero_b).collect()),
        ],
    );
    write_text(&out.join("near_zero.svg"), &tag_svg(near_zero, &hash))?;
    files.extend(["final_overlay.svg".into(), "entropy.svg".into(), "near_zero.svg".into()]);
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            command: "analyze",
            config_hash: hash.clone(),
            variant: None,
            cohorts: None,
            files,
        },
    )?;
    let last = comparison.rows.last().expect("nonempty");
    println!(
        "final step {}: entropy {:.4} vs {:.4} bits, near-zero {:.4} vs {:.4}; entropy_higher={} sparsity_lower={}",
        last.step,
        last.entropy_a,
        last.entropy_b,
        last.near_zero_a,
        last.near_zero_b,
        comparison.entropy_higher,
        comparison.sparsity_lower
    );
    println!("wrote {}", out.display());
    Ok(())
}

/// `baseline` for `out/baseline/snapshots`, else the directory name.
fn series_name(dir: &Path, fallback: &str) -> String {
    let name = |p: &Path| p.file_name().and_then(|s| s.to_str()).map(str::to_owned);
    match name(dir) {
        Some(n) if n == "snapshots" => dir.parent().and_then(name).unwrap_or_else(|| fallback.into()),
        Some(n) => n,
        None => fallback.into(),
    }
}
