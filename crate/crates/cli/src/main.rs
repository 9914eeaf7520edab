//! `selfvla`: trial matrices, demonstrations, dataset splits and reports.
//!
//! Any failure prints one JSON line `{"error":...,"kind":...}` on standard
//! error and exits nonzero.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use selfvla_core::episode::io::{read_any, read_episodes, write_episode, write_split, StoredEpisode, StoredFile};
use selfvla_core::episode::{build_splits, label_phases, record, LabeledEpisode};
use selfvla_core::harness::report::render_comparison;
use selfvla_core::harness::{
    aggregate, compare, generate_demos, render_report, run_trials_with, DemoConfig, HarnessConfig, Report,
    ReportFormat, TrialOutcome, SEED_ENV,
};
use selfvla_core::skill::SkillLibrary;
use selfvla_core::TaskId;

#[derive(Parser)]
#[command(
    name = "selfvla",
    version,
    about = "Planner, skill and corrector trials on simulated disassembly"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a TOML trial matrix and write outcomes and reports.
    RunTrials {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write every episode to `episodes.jsonl`.
        #[arg(long)]
        record: bool,
    },
    /// Record successful scripted demonstrations on the training placements.
    GenDemos {
        #[arg(long)]
        task: TaskId,
        #[arg(long)]
        n: usize,
        /// Defaults to the environment seed, then 0.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        miss_prob: f64,
        #[arg(long, default_value_t = 0.1)]
        slip_prob: f64,
    },
    /// Label recorded episodes with their phases.
    Label {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build planner, corrector and end-to-end splits from labeled episodes.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Downsample a labeled episode file or a split file.
    Downsample {
        #[arg(long, default_value_t = 3)]
        factor: usize,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a stage table from `outcomes.jsonl`.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "md")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Final-success deltas and time ratios of report `a` against `b`.
    Compare { a: PathBuf, b: PathBuf },
}

struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, e: impl std::fmt::Display) -> Self {
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::new("io", format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(io_err(path))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> CliResult<()> {
    w.flush().map_err(io_err(path))
}

fn read_outcomes(path: &Path) -> CliResult<Vec<TrialOutcome>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::new("parse", format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// A report from `report.json`, a directory holding one, or `outcomes.jsonl`.
fn load_report(path: &Path) -> CliResult<Report> {
    let path = if path.is_dir() {
        path.join("report.json")
    } else {
        path.to_path_buf()
    };
    if path.extension().is_some_and(|e| e == "jsonl") {
        return aggregate(&read_outcomes(&path)?).map_err(|e| CliError::new("report", e));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| CliError::new("parse", format!("{}: {e}", path.display())))
}

fn run_trials_cmd(config: &Path, out: &Path, record_episodes: bool) -> CliResult<()> {
    let text = fs::read_to_string(config).map_err(io_err(config))?;
    let cfg = HarnessConfig::from_toml(&text)
        .and_then(HarnessConfig::with_env_seed)
        .map_err(|e| CliError::new("config", e))?;
    let library = SkillLibrary::shipped();
    let runs = run_trials_with(&cfg, &library, |_, r| {
        let episode = record_episodes.then(|| record(&r.output));
        (r.outcome, episode)
    })
    .map_err(|e| CliError::new("trial", e))?;

    fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join("outcomes.jsonl");
    let mut w = create(&path)?;
    for (o, _) in &runs {
        let line = serde_json::to_string(o).map_err(|e| CliError::new("io", e))?;
        writeln!(w, "{line}").map_err(io_err(&path))?;
    }
    finish(w, &path)?;
    if record_episodes {
        let path = out.join("episodes.jsonl");
        let mut w = create(&path)?;
        for (_, e) in runs.iter() {
            if let Some(e) = e {
                write_episode(&mut w, &StoredEpisode::raw(e.clone())).map_err(io_err(&path))?;
            }
        }
        finish(w, &path)?;
    }
    let outcomes: Vec<TrialOutcome> = runs.into_iter().map(|(o, _)| o).collect();
    let report = aggregate(&outcomes).map_err(|e| CliError::new("report", e))?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::new("io", e))?;
    write_text(&out.join("report.json"), &(json + "\n"))?;
    write_text(&out.join("report.md"), &render_report(&report, ReportFormat::Markdown))?;
    write_text(&out.join("report.csv"), &render_report(&report, ReportFormat::Csv))?;
    print!("{}", render_report(&report, ReportFormat::Markdown));
    Ok(())
}

fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::new("config", format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn gen_demos_cmd(task: TaskId, n: usize, seed: Option<u64>, out: &Path, miss: f64, slip: f64) -> CliResult<()> {
    for p in [miss, slip] {
        if !(0.0..=1.0).contains(&p) {
            return Err(CliError::new("config", format!("fault probability {p} outside [0, 1]")));
        }
    }
    let seed = match seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let mut cfg = DemoConfig::new(task, n, seed);
    cfg.faults.grasp_miss_prob = miss;
    cfg.faults.grasp_slip_prob = slip;
    let demos = generate_demos(&cfg, &SkillLibrary::shipped()).map_err(|e| CliError::new("trial", e))?;
    let mut w = create(out)?;
    for d in &demos {
        write_episode(&mut w, &StoredEpisode::raw(d.clone())).map_err(io_err(out))?;
    }
    finish(w, out)?;
    eprintln!("wrote {} {} demonstrations to {}", demos.len(), task, out.display());
    Ok(())
}

fn read_stored(path: &Path) -> CliResult<Vec<StoredEpisode>> {
    read_episodes(open(path)?).map_err(|e| CliError::new("parse", format!("{}: {e}", path.display())))
}

fn label_cmd(input: &Path, out: &Path) -> CliResult<()> {
    let stored = read_stored(input)?;
    let mut w = create(out)?;
    for (i, s) in stored.into_iter().enumerate() {
        let l = label_phases(s.episode).map_err(|e| CliError::new("label", format!("episode {i}: {e}")))?;
        write_episode(&mut w, &StoredEpisode::from(l)).map_err(io_err(out))?;
    }
    finish(w, out)
}

fn labeled(path: &Path) -> CliResult<Vec<LabeledEpisode>> {
    read_stored(path)?
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            s.labeled()
                .ok_or_else(|| CliError::new("label", format!("episode {i} of {} is not labeled", path.display())))
        })
        .collect()
}

fn split_cmd(input: &Path, out: &Path) -> CliResult<()> {
    let splits = build_splits(&labeled(input)?).map_err(|e| CliError::new("split", e))?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    for s in splits.iter() {
        let path = out.join(format!("{}.jsonl", s.name));
        let mut w = create(&path)?;
        write_split(&mut w, s).map_err(io_err(&path))?;
        finish(w, &path)?;
        eprintln!("{}: {} trajectories", s.name, s.len());
    }
    Ok(())
}

fn downsample_cmd(factor: usize, input: &Path, out: &Path) -> CliResult<()> {
    let file = read_any(open(input)?).map_err(|e| CliError::new("parse", format!("{}: {e}", input.display())))?;
    let bad_factor = |e| CliError::new("config", e);
    let mut w = create(out)?;
    match file {
        StoredFile::Split(s) => {
            let d = s.downsample(factor).map_err(bad_factor)?;
            write_split(&mut w, &d).map_err(io_err(out))?;
        }
        StoredFile::Episodes(eps) => {
            for (i, s) in eps.into_iter().enumerate() {
                let l = s
                    .labeled()
                    .ok_or_else(|| CliError::new("label", format!("episode {i} is not labeled")))?;
                let d = l.downsample(factor).map_err(bad_factor)?;
                write_episode(&mut w, &StoredEpisode::from(d)).map_err(io_err(out))?;
            }
        }
    }
    finish(w, out)
}

fn report_cmd(input: &Path, format: &str, out: Option<&Path>) -> CliResult<()> {
    let format: ReportFormat = format.parse().map_err(|e| CliError::new("config", e))?;
    let report = load_report(input)?;
    let text = render_report(&report, format);
    match out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn compare_cmd(a: &Path, b: &Path) -> CliResult<()> {
    let c = compare(&load_report(a)?, &load_report(b)?).map_err(|e| CliError::new("report", e))?;
    print!("{}", render_comparison(&c));
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::RunTrials { config, out, record } => run_trials_cmd(&config, &out, record),
        Command::GenDemos {
            task,
            n,
            seed,
            out,
            miss_prob,
            slip_prob,
        } => gen_demos_cmd(task, n, seed, &out, miss_prob, slip_prob),
        Command::Label { input, out } => label_cmd(&input, &out),
        Command::Split { input, out } => split_cmd(&input, &out),
        Command::Downsample { factor, input, out } => downsample_cmd(factor, &input, &out),
        Command::Report { input, format, out } => report_cmd(&input, &format, out.as_deref()),
        Command::Compare { a, b } => compare_cmd(&a, &b),
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": message, "kind": kind }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            return fail("usage", msg.lines().next().unwrap_or("invalid arguments"), 2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind, &e.message, 1),
    }
}
