use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use dynsync::batch::{batch, derive_seed, failure_fraction, seeded_scenarios, RunSummary};
use dynsync::engine::{run, Scenario};
use dynsync::verifier::{self, Check, CheckOptions, Status, Verdict};

use crate::scenario_file::{Overrides, ScenarioFile, SchemaError};

/// Exit code for schema and scenario validation errors.
pub const EXIT_SCHEMA: i32 = 3;
/// Exit code for I/O and other runtime failures.
pub const EXIT_RUNTIME: i32 = 4;

/// Columns of `summary.csv` and of every row of `aggregate.csv`.
pub const SUMMARY_COLUMNS: [&str; 13] = [
    "seed",
    "graph_seed",
    "n",
    "s_max",
    "horizon",
    "t_synch",
    "detection_rounds",
    "common_detection_round",
    "simultaneous",
    "max_msg_bytes",
    "status",
    "verdicts",
    "error",
];

#[derive(Debug)]
pub enum Failure {
    Schema(SchemaError),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Schema(_) => EXIT_SCHEMA,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Schema(e) => write!(f, "scenario error: {e}"),
            Failure::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<SchemaError> for Failure {
    fn from(e: SchemaError) -> Self {
        Failure::Schema(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

#[derive(Debug, Clone, Default)]
pub struct CommonOptions {
    pub overrides: Overrides,
    pub out_dir: Option<PathBuf>,
    pub full_lemma_sweep: bool,
}

impl CommonOptions {
    fn check_options(&self) -> CheckOptions {
        if self.full_lemma_sweep {
            CheckOptions::full_sweep()
        } else {
            CheckOptions::default()
        }
    }

    fn out_dir(&self, file: &ScenarioFile) -> Result<PathBuf, Failure> {
        let dir = self
            .out_dir
            .clone()
            .or_else(|| file.output().dir.map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).map_err(|e| anyhow::anyhow!("creating {}: {e}", dir.display()))?;
        Ok(dir)
    }
}

pub fn load(path: &Path) -> Result<ScenarioFile, Failure> {
    let text = fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
    Ok(ScenarioFile::parse(&text)?)
}

fn worst(verdicts: &[Verdict]) -> Status {
    verdicts.iter().map(|v| v.status).max().unwrap_or(Status::Holds)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn summary_record(scenario: &Scenario, result: &Result<RunSummary, String>) -> Vec<String> {
    let head = [
        scenario.master_seed.to_string(),
        scenario.graph.seed.to_string(),
        scenario.n().to_string(),
        scenario.s_max().to_string(),
        scenario.horizon.to_string(),
    ];
    let tail = match result {
        Ok(s) => [
            opt(s.t_synch),
            s.detection_rounds.iter().map(|d| opt(*d)).collect::<Vec<_>>().join(";"),
            opt(s.common_detection),
            s.simultaneous.to_string(),
            s.max_msg_bytes.to_string(),
            worst(&s.verdicts).to_string(),
            s.verdicts
                .iter()
                .map(|v| format!("{}={}", v.property, v.status))
                .collect::<Vec<_>>()
                .join(";"),
            String::new(),
        ],
        Err(e) => {
            let mut t: [String; 8] = Default::default();
            t[5] = "error".into();
            t[7] = e.clone();
            t
        }
    };
    head.into_iter().chain(tail).collect()
}

fn print_verdict(out: &mut impl Write, v: &Verdict) -> io::Result<()> {
    write!(out, "{}: {}", v.property, v.status)?;
    if !v.measured.is_empty() {
        write!(out, " {}", serde_json::to_string(&v.measured).unwrap_or_default())?;
    }
    if let Some(w) = &v.witness {
        write!(out, " witness round {}", w.round)?;
        if let Some(node) = w.node {
            write!(out, " node {node}")?;
        }
        if let Some(peer) = w.peer {
            write!(out, " peer {peer}")?;
        }
        write!(out, ": {}", w.detail)?;
    }
    if let Some(note) = &v.note {
        write!(out, " ({note})")?;
    }
    writeln!(out)
}

/// Runs one scenario, writes the trace (JSON and per-round CSV) and the
/// summary CSV, and returns the verifier exit code.
pub fn cmd_run(path: &Path, opts: &CommonOptions, out: &mut impl Write) -> Result<i32, Failure> {
    let file = load(path)?;
    let scenario = file.to_scenario(&opts.overrides)?;
    let checks = file.checks(&opts.overrides);
    let trace = run(&scenario).map_err(|e| Failure::Schema(SchemaError(e.to_string())))?;
    let summary = RunSummary::from_trace(&trace, &checks, &opts.check_options());

    let dir = opts.out_dir(&file)?;
    let names = file.output();
    fs::write(dir.join(&names.trace), trace.to_json())?;
    trace.write_csv(BufWriter::new(File::create(dir.join(&names.trace_csv))?))?;
    let mut w = csv::Writer::from_path(dir.join(&names.summary))?;
    w.write_record(SUMMARY_COLUMNS)?;
    w.write_record(summary_record(&scenario, &Ok(summary.clone())))?;
    w.flush()?;

    writeln!(out, "t_synch: {}", opt(summary.t_synch))?;
    let rounds: Vec<String> = summary
        .detection_rounds
        .iter()
        .map(|d| d.map_or_else(|| "-".to_string(), |d| d.to_string()))
        .collect();
    writeln!(out, "detection rounds: {}", rounds.join(" "))?;
    for v in &summary.verdicts {
        print_verdict(out, v)?;
    }
    Ok(verifier::exit_code(&summary.verdicts))
}

#[derive(Debug, Clone, Default)]
pub struct BatchOptions {
    pub seeds: Option<u64>,
    pub parallel: usize,
    pub threshold: Option<f64>,
}

/// Runs `k` copies with derived protocol seeds and writes the aggregate CSV:
/// one row per run, then a `failure_fraction` line. Exit code 0 iff the
/// failure fraction is within the threshold, 1 otherwise.
pub fn cmd_batch(
    path: &Path,
    opts: &CommonOptions,
    batch_opts: &BatchOptions,
    out: &mut impl Write,
) -> Result<i32, Failure> {
    let file = load(path)?;
    let template = file.to_scenario(&opts.overrides)?;
    let checks = file.checks(&opts.overrides);
    let k = batch_opts
        .seeds
        .or_else(|| file.batch.as_ref().and_then(|b| b.seeds))
        .unwrap_or(100);
    let threshold = batch_opts.threshold.unwrap_or_else(|| file.batch_threshold());
    let scenarios = seeded_scenarios(&template, k);
    let results: Vec<_> =
        batch(&scenarios, &checks, &opts.check_options(), batch_opts.parallel).map_err(|e| anyhow::anyhow!("{e}"))?;
    let fraction = failure_fraction(&results);

    let dir = opts.out_dir(&file)?;
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_path(dir.join(file.output().aggregate))?;
    w.write_record(SUMMARY_COLUMNS)?;
    for (s, r) in scenarios.iter().zip(&results) {
        let r = r.clone().map_err(|e| e.to_string());
        w.write_record(summary_record(s, &r))?;
    }
    w.write_record(["failure_fraction".to_string(), format!("{fraction:.6}")])?;
    w.flush()?;

    let failed = results
        .iter()
        .filter(|r| r.as_ref().map_or(true, RunSummary::failed))
        .count();
    writeln!(
        out,
        "runs: {k}, failed: {failed}, failure fraction: {fraction:.4}, threshold: {threshold}"
    )?;
    Ok(if fraction <= threshold { 0 } else { 1 })
}

/// Certifies the scenario's graph sequence against its declared class over
/// the horizon. Exit code 0 if certified, 1 with the first failing window
/// otherwise.
pub fn cmd_certify(path: &Path, opts: &CommonOptions, out: &mut impl Write) -> Result<i32, Failure> {
    let file = load(path)?;
    let scenario = file.to_scenario(&opts.overrides)?;
    let class = file.certification_class()?;
    let adversary = scenario.adversary().map_err(|e| SchemaError(e.to_string()))?;
    let cert = adversary
        .certify_window(class, scenario.horizon)
        .map_err(|e| SchemaError(e.to_string()))?;
    writeln!(out, "{}", serde_json::to_string(&cert).map_err(anyhow::Error::from)?)?;
    match cert.first_failure {
        None => {
            writeln!(out, "certified over {} windows", cert.windows_checked)?;
            Ok(0)
        }
        Some(t) => {
            writeln!(out, "first failing window t={t}")?;
            Ok(1)
        }
    }
}

/// Check names accepted by `--checks`.
pub fn parse_checks(list: &str) -> Result<Vec<Check>, SchemaError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|name| Check::from_name(name).ok_or_else(|| SchemaError(format!("--checks: unknown check `{name}`"))))
        .collect()
}

/// Seed of the `index`-th batch run, for reproducing a single row with
/// `run --seed`.
pub fn batch_seed(base: u64, index: u64) -> u64 {
    derive_seed(base, index)
}
