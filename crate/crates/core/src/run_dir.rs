//! On-disk layout of a benchmark run.
//!
//! ```text
//! <run dir>/
//!   manifest.json            config snapshot, benchmark and cassette digests, totals, timestamps
//!   problems.jsonl           the benchmark in canonical form
//!   prompts.toml             prompt templates used
//!   trajectories/<id>.jsonl  one line per stage record, then one trajectory summary line
//! ```
//!
//! A run directory is self-describing and append-only: nothing is ever
//! overwritten. Timestamps appear only in the manifest.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::{parse_benchmark, to_canonical_lines, BenchmarkManifest, CorpusError};
use crate::digest::sha256_hex;
use crate::fsutil::{safe_stem, write_atomic};
use crate::gateway::CostLedger;
use crate::metrics::{score_run, MetricsError, RunReport};
use crate::orchestrator::{Pipeline, PipelineConfig, PipelineError, StageRecord, Trajectory};

pub const RUN_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROBLEMS_FILE: &str = "problems.jsonl";
pub const PROMPTS_FILE: &str = "prompts.toml";
pub const TRAJECTORY_DIR: &str = "trajectories";

#[derive(Debug, Error)]
pub enum RunDirError {
    #[error("run directory {0} already exists and is not empty")]
    Exists(PathBuf),
    #[error("{0} already exists; run directories are append-only")]
    WouldOverwrite(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunDirError + '_ {
    move |source| RunDirError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, reason: impl std::fmt::Display) -> RunDirError {
    RunDirError::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkRef {
    pub name: String,
    pub digest: String,
    pub problem_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteRef {
    pub path: PathBuf,
    /// Digest of the cassette when the run started (replay) or finished (record).
    pub digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool_version: String,
    pub benchmark: BenchmarkRef,
    pub pipeline: PipelineConfig,
    pub gateway_mode: String,
    pub cassette: Option<CassetteRef>,
    pub config_snapshot: String,
    pub ledger: CostLedger,
    pub trajectories: usize,
    pub aborted: usize,
    pub started_at_unix_ms: u64,
    pub finished_at_unix_ms: u64,
    pub elapsed_ms: u64,
}

pub fn file_digest(path: &Path) -> Option<String> {
    std::fs::read(path).ok().map(|b| format!("sha256:{}", sha256_hex(&b)))
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// A trajectory as line-delimited records: every stage, then the summary.
pub fn trajectory_lines(t: &Trajectory) -> String {
    let mut out = String::new();
    for s in &t.stages {
        let mut v = serde_json::to_value(s).expect("stage serializes");
        v.as_object_mut()
            .expect("object")
            .insert("record".into(), Value::from("stage"));
        out.push_str(&v.to_string());
        out.push('\n');
    }
    let mut v = serde_json::to_value(t).expect("trajectory serializes");
    let obj = v.as_object_mut().expect("object");
    obj.remove("stages");
    obj.insert("record".into(), Value::from("trajectory"));
    obj.insert("stage_count".into(), Value::from(t.stages.len()));
    out.push_str(&v.to_string());
    out.push('\n');
    out
}

pub fn parse_trajectory_lines(text: &str) -> Result<Trajectory, String> {
    let mut stages: Vec<StageRecord> = Vec::new();
    let mut summary: Option<Value> = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut v: Value = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        let obj = v.as_object_mut().ok_or_else(|| format!("line {}: not an object", i + 1))?;
        let kind = obj.remove("record");
        match kind.as_ref().and_then(Value::as_str) {
            Some("stage") if summary.is_none() => {
                stages.push(serde_json::from_value(v).map_err(|e| format!("line {}: {e}", i + 1))?)
            }
            Some("trajectory") if summary.is_none() => summary = Some(v),
            other => return Err(format!("line {}: unexpected record {other:?}", i + 1)),
        }
    }
    let mut summary = summary.ok_or("missing trajectory summary line")?;
    let obj = summary.as_object_mut().expect("object");
    let count = obj.remove("stage_count").and_then(|c| c.as_u64());
    if count != Some(stages.len() as u64) {
        return Err(format!("stage_count {count:?} but {} stage lines", stages.len()));
    }
    obj.insert("stages".into(), serde_json::to_value(&stages).expect("stages serialize"));
    serde_json::from_value(summary).map_err(|e| e.to_string())
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates a fresh run directory; an existing non-empty directory is an error.
    pub fn create(path: &Path) -> Result<Self, RunDirError> {
        if path.exists() {
            let mut entries = std::fs::read_dir(path).map_err(io_err(path))?;
            if entries.next().is_some() {
                return Err(RunDirError::Exists(path.to_path_buf()));
            }
        }
        let traj = path.join(TRAJECTORY_DIR);
        std::fs::create_dir_all(&traj).map_err(io_err(&traj))?;
        Ok(RunDir {
            root: path.to_path_buf(),
        })
    }

    pub fn open(path: &Path) -> Result<Self, RunDirError> {
        let manifest = path.join(MANIFEST_FILE);
        if !manifest.is_file() {
            return Err(format_err(path, "not a run directory (no manifest.json)"));
        }
        Ok(RunDir {
            root: path.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn write_new(&self, path: &Path, bytes: &[u8]) -> Result<(), RunDirError> {
        if path.exists() {
            return Err(RunDirError::WouldOverwrite(path.to_path_buf()));
        }
        write_atomic(path, bytes).map_err(io_err(path))
    }

    pub fn trajectory_path(&self, problem_id: &str) -> PathBuf {
        self.root.join(TRAJECTORY_DIR).join(format!("{}.jsonl", safe_stem(problem_id)))
    }

    pub fn write_problems(&self, b: &BenchmarkManifest) -> Result<(), RunDirError> {
        self.write_new(&self.root.join(PROBLEMS_FILE), to_canonical_lines(&b.problems).as_bytes())
    }

    pub fn write_prompts(&self, text: &str) -> Result<(), RunDirError> {
        self.write_new(&self.root.join(PROMPTS_FILE), text.as_bytes())
    }

    pub fn write_trajectory(&self, t: &Trajectory) -> Result<(), RunDirError> {
        self.write_new(&self.trajectory_path(&t.problem_id), trajectory_lines(t).as_bytes())
    }

    pub fn write_manifest(&self, m: &RunManifest) -> Result<(), RunDirError> {
        let mut text = serde_json::to_string_pretty(m).expect("manifest serializes");
        text.push('\n');
        self.write_new(&self.root.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn read_manifest(&self) -> Result<RunManifest, RunDirError> {
        let path = self.root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| format_err(&path, e))
    }

    pub fn read_benchmark(&self, name: &str) -> Result<BenchmarkManifest, RunDirError> {
        let path = self.root.join(PROBLEMS_FILE);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(parse_benchmark(name, &text)?)
    }

    pub fn read_trajectory(&self, problem_id: &str) -> Result<Trajectory, RunDirError> {
        let path = self.trajectory_path(problem_id);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        parse_trajectory_lines(&text).map_err(|e| format_err(&path, e))
    }

    /// Every trajectory file, in file-name order.
    pub fn read_trajectories(&self) -> Result<Vec<Trajectory>, RunDirError> {
        let dir = self.root.join(TRAJECTORY_DIR);
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        paths
            .iter()
            .map(|p| {
                let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                parse_trajectory_lines(&text).map_err(|e| format_err(p, e))
            })
            .collect()
    }

    /// Benchmark and trajectories, the latter in benchmark order.
    pub fn load(&self) -> Result<(RunManifest, BenchmarkManifest, Vec<Trajectory>), RunDirError> {
        let manifest = self.read_manifest()?;
        let bench = self.read_benchmark(&manifest.benchmark.name)?;
        let mut trajs = self.read_trajectories()?;
        let pos: std::collections::HashMap<&str, usize> =
            bench.ids().enumerate().map(|(i, id)| (id, i)).collect();
        trajs.sort_by_key(|t| pos.get(t.problem_id.as_str()).copied().unwrap_or(usize::MAX));
        Ok((manifest, bench, trajs))
    }

    /// Scores the run from nothing but the directory.
    pub fn report(&self) -> Result<RunReport, RunDirError> {
        let (manifest, bench, trajs) = self.load()?;
        Ok(score_run(&trajs, &bench)?.with_config(manifest.config_snapshot))
    }
}

/// What to record about the run besides its trajectories.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub jobs: usize,
    pub config_snapshot: String,
    pub gateway_mode: String,
    pub cassette: Option<PathBuf>,
    pub prompts_text: String,
}

/// Runs every problem of `bench` through `pipeline` with up to `jobs`
/// problems in flight, writing each trajectory as soon as it finishes and
/// the manifest last. Trajectories are returned in benchmark order.
pub fn execute_run(
    pipeline: &Pipeline,
    bench: &BenchmarkManifest,
    dir: &RunDir,
    opts: &RunOptions,
) -> Result<Vec<Trajectory>, RunDirError> {
    pipeline.validate()?;
    let started_at = unix_ms();
    let clock = Instant::now();
    let replay_digest = opts.cassette.as_deref().and_then(file_digest);
    dir.write_problems(bench)?;
    dir.write_prompts(&opts.prompts_text)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| format_err(dir.root(), e))?;
    let results: Vec<Result<Trajectory, RunDirError>> = pool.install(|| {
        bench
            .problems
            .par_iter()
            .map(|p| {
                let t = pipeline.run_problem(p)?;
                dir.write_trajectory(&t)?;
                log::info!("{}: {:?}", p.id, t.hidden_verdict);
                Ok(t)
            })
            .collect()
    });
    let trajs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let cassette = opts.cassette.as_ref().map(|p| CassetteRef {
        path: p.clone(),
        digest: if opts.gateway_mode == "record" {
            file_digest(p)
        } else {
            replay_digest.clone()
        },
    });
    dir.write_manifest(&RunManifest {
        format_version: RUN_FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        benchmark: BenchmarkRef {
            name: bench.name.clone(),
            digest: format!("sha256:{}", sha256_hex(to_canonical_lines(&bench.problems).as_bytes())),
            problem_count: bench.problems.len(),
        },
        pipeline: pipeline.config,
        gateway_mode: opts.gateway_mode.clone(),
        cassette,
        config_snapshot: opts.config_snapshot.clone(),
        ledger: trajs.iter().map(|t| &t.ledger).sum(),
        trajectories: trajs.len(),
        aborted: trajs.iter().filter(|t| t.abort.is_some()).count(),
        started_at_unix_ms: started_at,
        finished_at_unix_ms: unix_ms(),
        elapsed_ms: clock.elapsed().as_millis() as u64,
    })?;
    Ok(trajs)
}
