//! Experiment orchestration: generate, split, train, evaluate, report.
//!
//! Output layout under the run directory:
//!
//! ```text
//! dataset/manifest.json, dataset/<oracle>__<scenario>__{inputs,outputs}.bin
//! splits/<plan>.json
//! models/<plan>/<emulator>/<oracle>.json
//! results/records.csv, results/table.csv, results/table.md, results/failures.json
//! results/report.md
//! run-<command>.json
//! ```
//!
//! Every file is written under a temporary name and renamed into place.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ExperimentConfig, ProtocolSet};

use crate::dataset::Dataset;
use crate::emulator::{self, Emulator, EmulatorKind, ModelFile};
use crate::eval::{self, build_partial_results_table, build_results_table, EvalError, EvalRecord};
use crate::grid::lat_weights;
use crate::io::{checksum_hex, read_dataset, read_manifest, write_atomic, write_dataset, DatasetIoError};
use crate::rng::derive_seed;
use crate::split::{baseline_split, rotate_ssp_splits, time_domain_split, verify_split, Part, SplitPlan};
use crate::synth::build_dataset;

pub const HARNESS_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetIoError),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("results error: {0}")]
    Results(#[from] EvalError),
}

impl HarnessError {
    /// 1 for configuration problems, 2 for I/O and integrity problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Paths inside one run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn plan_file(&self, plan: &str) -> PathBuf {
        self.root.join("splits").join(format!("{plan}.json"))
    }

    pub fn model_file(&self, plan: &str, kind: EmulatorKind, oracle: &str) -> PathBuf {
        self.root
            .join("models")
            .join(plan)
            .join(kind.name())
            .join(format!("{oracle}.json"))
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results")
    }

    pub fn records_csv(&self) -> PathBuf {
        self.results().join("records.csv")
    }

    pub fn table_csv(&self) -> PathBuf {
        self.results().join("table.csv")
    }

    pub fn table_md(&self) -> PathBuf {
        self.results().join("table.md")
    }

    pub fn failures_json(&self) -> PathBuf {
        self.results().join("failures.json")
    }

    pub fn report_md(&self) -> PathBuf {
        self.results().join("report.md")
    }

    pub fn run_manifest(&self, command: &str) -> PathBuf {
        self.root.join(format!("run-{command}.json"))
    }

    fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// A training cell that did not produce a model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellFailure {
    pub emulator: EmulatorKind,
    pub oracle: String,
    pub plan: String,
    pub error: String,
}

/// Provenance record written next to the artifacts of one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub harness_version: String,
    pub config: ExperimentConfig,
    /// Relative path to FNV-1a 64 checksum of the bytes written.
    pub artifacts: BTreeMap<String, String>,
    pub stages: Vec<StageTiming>,
    pub failed_cells: Vec<CellFailure>,
}

struct Recorder<'a> {
    layout: &'a Layout,
    manifest: RunManifest,
}

impl<'a> Recorder<'a> {
    fn new(layout: &'a Layout, command: &str, config: &ExperimentConfig) -> Self {
        Self {
            layout,
            manifest: RunManifest {
                command: command.to_string(),
                harness_version: HARNESS_VERSION.to_string(),
                config: config.clone(),
                artifacts: BTreeMap::new(),
                stages: Vec::new(),
                failed_cells: Vec::new(),
            },
        }
    }

    fn put(&mut self, path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
        let (rel, sum) = put_file(self.layout, path, bytes)?;
        self.manifest.artifacts.insert(rel, sum);
        Ok(())
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T, HarnessError>) -> Result<T, HarnessError> {
        info!("stage {name}");
        let start = Instant::now();
        let out = f(self)?;
        self.manifest.stages.push(StageTiming {
            stage: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    fn finish(self) -> Result<RunManifest, HarnessError> {
        let path = self.layout.run_manifest(&self.manifest.command);
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serialises");
        put_file(self.layout, &path, json.as_bytes())?;
        Ok(self.manifest)
    }
}

fn put_file(layout: &Layout, path: &Path, bytes: &[u8]) -> Result<(String, String), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_atomic(path, bytes).map_err(io_err(path))?;
    Ok((layout.relative(path), checksum_hex(bytes)))
}

fn generate_into(config: &ExperimentConfig, rec: &mut Recorder<'_>) -> Result<Dataset, HarnessError> {
    let dir = rec.layout.dataset();
    rec.stage("generate", |rec| {
        let ds = build_dataset(&config.generation, config.seed)
            .map_err(|e| HarnessError::Config(format!("generation: {e}")))?;
        let manifest = write_dataset(&ds, &dir, config.dtype)?;
        for (file, sum) in &manifest.checksums {
            rec.manifest
                .artifacts
                .insert(rec.layout.relative(&dir.join(file)), sum.clone());
        }
        let manifest_path = dir.join(crate::io::MANIFEST_FILE);
        let bytes = fs::read(&manifest_path).map_err(io_err(&manifest_path))?;
        rec.manifest
            .artifacts
            .insert(rec.layout.relative(&manifest_path), checksum_hex(&bytes));
        Ok(())
    })?;
    // Always continue from the bytes on disk so an f32 dataset behaves the
    // same whether or not it was generated in this process.
    rec.stage("load", |rec| load_dataset(config, rec.layout))
}

/// Read the run's dataset and check that it matches the configuration.
pub fn load_dataset(config: &ExperimentConfig, layout: &Layout) -> Result<Dataset, HarnessError> {
    let dir = layout.dataset();
    let manifest = read_manifest(&dir).map_err(|e| match e {
        DatasetIoError::MissingFile { path } => HarnessError::Integrity(format!(
            "no dataset at {} (run `generate` first or pass --generate)",
            path.display()
        )),
        other => other.into(),
    })?;
    let gen = &config.generation;
    let oracles: Vec<String> = gen.oracles.iter().map(|o| o.id.clone()).collect();
    if manifest.grid.n_lat != gen.grid.n_lat
        || manifest.grid.n_lon != gen.grid.n_lon
        || manifest.oracles != oracles
        || manifest.scenarios != gen.scenarios
        || manifest.dtype != config.dtype
    {
        return Err(HarnessError::Config(format!(
            "dataset in {} was generated from a different configuration; regenerate it",
            dir.display()
        )));
    }
    Ok(read_dataset(&dir)?)
}

/// Split plans for the configured protocols, in protocol order.
pub fn build_plans(config: &ExperimentConfig, ds: &Dataset) -> Result<Vec<SplitPlan>, HarnessError> {
    let split_err = |e: crate::split::SplitError| HarnessError::Config(format!("split: {e}"));
    let mut plans = Vec::new();
    for p in &config.protocols {
        match p {
            ProtocolSet::Baseline => plans.push(baseline_split(ds, config.seed).map_err(split_err)?),
            ProtocolSet::TimeShift => plans.push(
                time_domain_split(ds, &config.time_shift_test, config.seed).map_err(split_err)?,
            ),
            ProtocolSet::SspRotation => plans.extend(rotate_ssp_splits(ds, config.seed).map_err(split_err)?),
        }
    }
    for plan in &plans {
        let report = verify_split(plan, ds);
        if !report.is_ok() {
            return Err(HarnessError::Integrity(format!(
                "plan {} violates split laws: {:?}",
                plan.name, report.violations
            )));
        }
    }
    Ok(plans)
}

fn write_plans(plans: &[SplitPlan], rec: &mut Recorder<'_>) -> Result<(), HarnessError> {
    for plan in plans {
        rec.put(&rec.layout.plan_file(&plan.name), plan.to_json().as_bytes())?;
    }
    Ok(())
}

/// Restricts which cells `train` and `eval` touch; `None` means all.
#[derive(Debug, Clone, Default)]
pub struct CellFilter {
    pub emulator: Option<EmulatorKind>,
    pub oracle: Option<String>,
    pub plan: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub jobs: usize,
    pub generate: bool,
    pub filter: CellFilter,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            generate: false,
            filter: CellFilter::default(),
        }
    }
}

#[derive(Debug, Clone)]
struct Cell<'p> {
    kind: EmulatorKind,
    oracle: String,
    plan: &'p SplitPlan,
}

impl Cell<'_> {
    fn failure(&self, error: impl ToString) -> CellFailure {
        CellFailure {
            emulator: self.kind,
            oracle: self.oracle.clone(),
            plan: self.plan.name.clone(),
            error: error.to_string(),
        }
    }
}

fn cells<'p>(config: &ExperimentConfig, ds: &Dataset, plans: &'p [SplitPlan], filter: &CellFilter) -> Vec<Cell<'p>> {
    let mut out = Vec::new();
    for &kind in &config.emulators {
        for oracle in &ds.oracles {
            for plan in plans {
                let keep = filter.emulator.is_none_or(|k| k == kind)
                    && filter.oracle.as_ref().is_none_or(|o| o == oracle)
                    && filter.plan.as_ref().is_none_or(|p| *p == plan.name);
                if keep {
                    out.push(Cell {
                        kind,
                        oracle: oracle.clone(),
                        plan,
                    });
                }
            }
        }
    }
    out
}

/// Training seed of one (emulator, oracle, plan) cell.
pub fn cell_seed(seed: u64, kind: EmulatorKind, oracle: &str, plan: &str) -> u64 {
    derive_seed(seed, &["train", kind.name(), oracle, plan])
}

fn test_records(ds: &Dataset, cell: &Cell<'_>, model: &Emulator) -> Result<Vec<EvalRecord>, EvalError> {
    let keys = cell.plan.keys_for(Part::Test, &cell.oracle);
    let views = emulator::views(ds, &keys)?;
    eval::evaluate(model, &views, &lat_weights(&ds.grid), &cell.oracle, &cell.plan.protocol)
}

struct CellOutcome {
    records: Vec<EvalRecord>,
    artifact: Option<(String, String)>,
}

fn train_cell(
    config: &ExperimentConfig,
    ds: &Dataset,
    cell: &Cell<'_>,
    layout: &Layout,
    evaluate: bool,
) -> Result<Result<CellOutcome, CellFailure>, HarnessError> {
    let mut tc = config.train_config(cell.kind);
    tc.seed = cell_seed(config.seed, cell.kind, &cell.oracle, &cell.plan.name);
    debug!("training {} on {} / {}", cell.kind, cell.oracle, cell.plan.name);
    let outcome = match emulator::train(cell.kind, cell.plan, ds, &cell.oracle, &tc) {
        Ok(o) => o,
        Err(e) => {
            warn!("{} on {} / {} failed: {e}", cell.kind, cell.oracle, cell.plan.name);
            return Ok(Err(cell.failure(e)));
        }
    };
    let records = if evaluate {
        match test_records(ds, cell, &outcome.emulator) {
            Ok(r) => r,
            Err(e) => return Ok(Err(cell.failure(e))),
        }
    } else {
        Vec::new()
    };
    let file = ModelFile {
        kind: cell.kind,
        grid: ds.grid.clone(),
        oracle_id: cell.oracle.clone(),
        plan: cell.plan.name.clone(),
        train_config: tc,
        selected_epoch: outcome.selected_epoch,
        history: outcome.history,
        model: outcome.emulator,
    };
    let json = serde_json::to_string(&file).expect("model serialises");
    let path = layout.model_file(&cell.plan.name, cell.kind, &cell.oracle);
    let artifact = put_file(layout, &path, json.as_bytes())?;
    Ok(Ok(CellOutcome {
        records,
        artifact: Some(artifact),
    }))
}

fn eval_cell(ds: &Dataset, cell: &Cell<'_>, layout: &Layout) -> Result<Result<CellOutcome, CellFailure>, HarnessError> {
    let path = layout.model_file(&cell.plan.name, cell.kind, &cell.oracle);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Ok(Err(cell.failure(format!("no model at {}", path.display()))))
        }
        Err(e) => return Err(io_err(&path)(e)),
    };
    let file: ModelFile = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Integrity(format!("{}: {e}", path.display())))?;
    if file.kind != cell.kind || file.oracle_id != cell.oracle || file.plan != cell.plan.name {
        return Err(HarnessError::Integrity(format!(
            "{} holds {}/{}/{}",
            path.display(),
            file.kind,
            file.oracle_id,
            file.plan
        )));
    }
    Ok(match test_records(ds, cell, &file.model) {
        Ok(records) => Ok(CellOutcome {
            records,
            artifact: None,
        }),
        Err(e) => Err(cell.failure(e)),
    })
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot start {jobs} workers: {e}")))
}

fn run_cells(
    cells: &[Cell<'_>],
    jobs: usize,
    rec: &mut Recorder<'_>,
    f: impl Fn(&Cell<'_>) -> Result<Result<CellOutcome, CellFailure>, HarnessError> + Sync,
) -> Result<(Vec<EvalRecord>, Vec<CellFailure>), HarnessError> {
    let results: Vec<_> = pool(jobs)?.install(|| cells.par_iter().map(&f).collect());
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r? {
            Ok(out) => {
                records.extend(out.records);
                if let Some((rel, sum)) = out.artifact {
                    rec.manifest.artifacts.insert(rel, sum);
                }
            }
            Err(f) => failures.push(f),
        }
    }
    failures.sort();
    Ok((records, failures))
}

fn write_results(
    records: &[EvalRecord],
    failures: &[CellFailure],
    threshold: f64,
    rec: &mut Recorder<'_>,
) -> Result<(), HarnessError> {
    let layout = rec.layout.clone();
    rec.put(&layout.records_csv(), eval::records_to_csv(records)?.as_bytes())?;
    let failures_json = serde_json::to_string_pretty(failures).expect("failures serialise");
    rec.put(&layout.failures_json(), failures_json.as_bytes())?;
    if records.is_empty() {
        warn!("no records; skipping the results table");
        return Ok(());
    }
    let table = if failures.is_empty() {
        build_results_table(records)?
    } else {
        build_partial_results_table(records)?
    };
    rec.put(&layout.table_csv(), table.to_csv().as_bytes())?;
    rec.put(&layout.table_md(), table.to_markdown(Some(threshold)).as_bytes())?;
    Ok(())
}

/// What a training or evaluation command produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub manifest: RunManifest,
    pub records: Vec<EvalRecord>,
    pub failures: Vec<CellFailure>,
}

impl ExperimentOutcome {
    /// 0 when every cell succeeded, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            3
        }
    }
}

pub fn cmd_generate(config: &ExperimentConfig, out: &Path) -> Result<RunManifest, HarnessError> {
    config.validate()?;
    let layout = Layout::new(out);
    let mut rec = Recorder::new(&layout, "generate", config);
    generate_into(config, &mut rec)?;
    rec.finish()
}

pub fn cmd_split(config: &ExperimentConfig, out: &Path) -> Result<RunManifest, HarnessError> {
    config.validate()?;
    let layout = Layout::new(out);
    let mut rec = Recorder::new(&layout, "split", config);
    let ds = rec.stage("load", |rec| load_dataset(config, rec.layout))?;
    rec.stage("split", |rec| {
        let plans = build_plans(config, &ds)?;
        write_plans(&plans, rec)
    })?;
    rec.finish()
}

/// Train the selected cells and write their model files.
pub fn cmd_train(config: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<ExperimentOutcome, HarnessError> {
    config.validate()?;
    let layout = Layout::new(out);
    let mut rec = Recorder::new(&layout, "train", config);
    let ds = rec.stage("load", |rec| load_dataset(config, rec.layout))?;
    let plans = rec.stage("split", |_| build_plans(config, &ds))?;
    let todo = cells(config, &ds, &plans, &opts.filter);
    if todo.is_empty() {
        return Err(HarnessError::Config("no cells match the filter".into()));
    }
    let (_, failures) = rec.stage("train", |rec| {
        run_cells(&todo, opts.jobs, rec, |c| train_cell(config, &ds, c, &layout, false))
    })?;
    rec.manifest.failed_cells = failures.clone();
    Ok(ExperimentOutcome {
        manifest: rec.finish()?,
        records: Vec::new(),
        failures,
    })
}

/// Evaluate previously trained models and write the result tables.
pub fn cmd_eval(config: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<ExperimentOutcome, HarnessError> {
    config.validate()?;
    let layout = Layout::new(out);
    let mut rec = Recorder::new(&layout, "eval", config);
    let ds = rec.stage("load", |rec| load_dataset(config, rec.layout))?;
    let plans = rec.stage("split", |_| build_plans(config, &ds))?;
    let todo = cells(config, &ds, &plans, &opts.filter);
    let (records, failures) = rec.stage("eval", |rec| {
        run_cells(&todo, opts.jobs, rec, |c| eval_cell(&ds, c, &layout))
    })?;
    rec.stage("results", |rec| write_results(&records, &failures, config.report_threshold, rec))?;
    rec.manifest.failed_cells = failures.clone();
    Ok(ExperimentOutcome {
        manifest: rec.finish()?,
        records,
        failures,
    })
}

/// Full pipeline: (generate), split, train and evaluate every
/// (emulator, oracle, plan) cell, then write records and tables.
///
/// A cell whose training fails is recorded and skipped; the outcome's
/// exit code is then 3.
pub fn cmd_experiment(
    config: &ExperimentConfig,
    out: &Path,
    opts: &RunOptions,
) -> Result<ExperimentOutcome, HarnessError> {
    config.validate()?;
    let layout = Layout::new(out);
    let mut rec = Recorder::new(&layout, "experiment", config);
    let ds = if opts.generate {
        generate_into(config, &mut rec)?
    } else {
        rec.stage("load", |rec| load_dataset(config, rec.layout))?
    };
    let plans = rec.stage("split", |rec| {
        let plans = build_plans(config, &ds)?;
        write_plans(&plans, rec)?;
        Ok(plans)
    })?;
    let todo = cells(config, &ds, &plans, &opts.filter);
    info!("{} training cells on {} worker(s)", todo.len(), opts.jobs.max(1));
    let (records, failures) = rec.stage("train_eval", |rec| {
        run_cells(&todo, opts.jobs, rec, |c| train_cell(config, &ds, c, &layout, true))
    })?;
    rec.stage("results", |rec| write_results(&records, &failures, config.report_threshold, rec))?;
    rec.manifest.failed_cells = failures.clone();
    Ok(ExperimentOutcome {
        manifest: rec.finish()?,
        records,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub markdown: String,
    pub flagged: Vec<String>,
    pub missing: Vec<String>,
}

/// Render the percent-change table of a results directory and flag cells
/// whose percent change exceeds `threshold`.
pub fn cmd_report(out: &Path, threshold: f64) -> Result<Report, HarnessError> {
    let layout = Layout::new(out);
    let path = layout.records_csv();
    if !path.exists() {
        return Err(HarnessError::Integrity(format!("no records at {}", path.display())));
    }
    let records = eval::read_records(&path)?;
    let table = build_partial_results_table(&records)?;
    let flagged: Vec<String> = table
        .flagged(threshold)
        .iter()
        .map(|c| {
            format!(
                "{}/{}/{}/{}: {:+.2}%",
                c.shifted.emulator,
                c.shifted.variable.name(),
                c.shifted.oracle,
                c.shifted.protocol,
                c.percent_change
            )
        })
        .collect();
    let mut text = table.to_text(Some(threshold));
    if !flagged.is_empty() {
        text.push_str(&format!("\n{} cell(s) above {threshold}% (marked *):\n", flagged.len()));
        for f in &flagged {
            text.push_str(&format!("  {f}\n"));
        }
    }
    let missing = table.missing();
    if !missing.is_empty() {
        text.push_str(&format!("\n{} cell(s) missing:\n", missing.len()));
        for m in &missing {
            text.push_str(&format!("  {m}\n"));
        }
    }
    let markdown = table.to_markdown(Some(threshold));
    put_file(&layout, &layout.report_md(), markdown.as_bytes())?;
    Ok(Report {
        text,
        markdown,
        flagged,
        missing,
    })
}

/// Per-repeat (config, directory) pairs: repeat `r` uses seed `seed + r`
/// and writes to `<out>/seed-<seed + r>`. A single repeat keeps `out`.
pub fn repeat_runs(config: &ExperimentConfig, out: &Path, repeat: usize) -> Vec<(ExperimentConfig, PathBuf)> {
    if repeat <= 1 {
        return vec![(config.clone(), out.to_path_buf())];
    }
    (0..repeat as u64)
        .map(|r| {
            let mut c = config.clone();
            c.seed = config.seed.wrapping_add(r);
            let dir = out.join(format!("seed-{}", c.seed));
            c.output_dir = dir.clone();
            (c, dir)
        })
        .collect()
}
