//! Local judge: compiles a candidate program once, runs it against test
//! cases in isolated child processes, and produces verdicts.
//!
//! Each run owns a fresh temporary directory, a scrubbed environment and its
//! own process group. A test is killed as soon as it exceeds its wall-clock
//! limit or output cap; the memory limit is enforced through `RLIMIT_AS`.
//! At most one child per available CPU runs at a time, and a test's clock
//! starts only once it holds a slot, so heavy concurrency queues instead of
//! turning into spurious time limits.
//! There is no network or filesystem jail: container hardening is a
//! deployment concern.

mod process;
mod toolchain;

use std::io;
use std::path::Path;
use std::sync::{Arc, LazyLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Problem, TestCase};
use crate::gateway::Permits;
use process::{run_process, ProcLimits};
pub use toolchain::{Toolchain, ToolchainTable};

pub const DEFAULT_OUTPUT_LIMIT_KB: u64 = 64;
/// Slack for reaping a killed program's process group.
pub const KILL_GRACE: Duration = Duration::from_millis(500);

static EXEC_SLOTS: LazyLock<Arc<Permits>> =
    LazyLock::new(|| Permits::new(std::thread::available_parallelism().map_or(1, |n| n.get())));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Accepted,
    WrongAnswer,
    RuntimeError,
    CompileError,
    TimeLimit,
    MemoryLimit,
    OutputLimit,
}

impl Verdict {
    pub fn is_accepted(self) -> bool {
        self == Verdict::Accepted
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::Accepted => "Accepted",
            Verdict::WrongAnswer => "WrongAnswer",
            Verdict::RuntimeError => "RuntimeError",
            Verdict::CompileError => "CompileError",
            Verdict::TimeLimit => "TimeLimit",
            Verdict::MemoryLimit => "MemoryLimit",
            Verdict::OutputLimit => "OutputLimit",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutionLimits {
    pub time_limit_s: f64,
    pub memory_limit_mb: u64,
    pub output_limit_kb: u64,
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        ExecutionLimits {
            time_limit_s: 5.0,
            memory_limit_mb: 512,
            output_limit_kb: DEFAULT_OUTPUT_LIMIT_KB,
        }
    }
}

impl ExecutionLimits {
    /// The problem's own time and memory limits, with this output cap.
    pub fn for_problem(p: &Problem, output_limit_kb: u64) -> Self {
        ExecutionLimits {
            time_limit_s: p.time_limit,
            memory_limit_mb: p.memory_limit,
            output_limit_kb,
        }
    }

    pub fn validate(&self) -> Result<(), SandboxError> {
        if !(self.time_limit_s.is_finite() && self.time_limit_s > 0.0)
            || self.memory_limit_mb == 0
            || self.output_limit_kb == 0
        {
            return Err(SandboxError::InvalidLimits(*self));
        }
        Ok(())
    }

    fn time_limit(&self) -> Duration {
        Duration::from_secs_f64(self.time_limit_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestScope {
    Sample,
    Hidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    SampleOnly,
    HiddenOnly,
    All,
}

impl Scope {
    fn includes(self, t: TestScope) -> bool {
        match self {
            Scope::SampleOnly => t == TestScope::Sample,
            Scope::HiddenOnly => t == TestScope::Hidden,
            Scope::All => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeCase {
    pub scope: TestScope,
    pub case: TestCase,
}

impl JudgeCase {
    /// Tests of `p` selected by `scope`, samples first.
    pub fn from_problem(p: &Problem, scope: Scope) -> Vec<JudgeCase> {
        let samples = p.sample_tests.iter().map(|c| (TestScope::Sample, c));
        let hidden = p.hidden_tests.iter().map(|c| (TestScope::Hidden, c));
        samples
            .chain(hidden)
            .filter(|(s, _)| scope.includes(*s))
            .map(|(scope, case)| JudgeCase {
                scope,
                case: case.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestResult {
    pub scope: TestScope,
    pub verdict: Verdict,
    pub stdout: String,
    pub stderr: String,
    pub elapsed_ms: u64,
    pub exit_code: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub per_test: Vec<TestResult>,
    pub overall: Verdict,
    pub compiled: bool,
    /// Compiler diagnostics when compilation failed.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub compile_output: String,
}

impl ExecutionReport {
    /// Index of the first test whose verdict is not Accepted.
    pub fn first_failure(&self) -> Option<usize> {
        self.per_test.iter().position(|t| !t.verdict.is_accepted())
    }
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("no toolchain configured for `{0}`")]
    ToolchainMissing(String),
    #[error("no tests to run")]
    NoTests,
    #[error("scope {0:?} selects no tests")]
    EmptyScope(Scope),
    #[error("invalid execution limits {0:?}")]
    InvalidLimits(ExecutionLimits),
    #[error("sandbox I/O: {0}")]
    Io(#[from] io::Error),
}

/// Canonical form used for output comparison: CRLF becomes LF, trailing
/// whitespace is stripped from every line, and trailing blank lines are dropped.
pub fn normalize_output(s: &str) -> String {
    let unified = s.replace("\r\n", "\n");
    let mut lines: Vec<&str> = unified.split('\n').map(str::trim_end).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

pub fn compare_output(actual: &str, expected: &str) -> bool {
    normalize_output(actual) == normalize_output(expected)
}

/// Overall verdict over the tests of `report` selected by `scope`.
pub fn aggregate(report: &ExecutionReport, scope: Scope) -> Result<Verdict, SandboxError> {
    if !report.compiled {
        return Ok(Verdict::CompileError);
    }
    let mut selected = report.per_test.iter().filter(|t| scope.includes(t.scope)).peekable();
    if selected.peek().is_none() {
        return Err(SandboxError::EmptyScope(scope));
    }
    Ok(selected
        .map(|t| t.verdict)
        .find(|v| !v.is_accepted())
        .unwrap_or(Verdict::Accepted))
}

const MEMORY_MARKERS: &[&str] = &[
    "MemoryError",
    "std::bad_alloc",
    "memory allocation of",
    "Cannot allocate memory",
    "out of memory",
];

fn lossy(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[derive(Debug, Clone)]
pub struct Sandbox {
    pub toolchains: ToolchainTable,
    pub compile_timeout: Duration,
}

impl Default for Sandbox {
    fn default() -> Self {
        Sandbox {
            toolchains: ToolchainTable::default(),
            compile_timeout: Duration::from_secs(60),
        }
    }
}

impl Sandbox {
    pub fn new(toolchains: ToolchainTable) -> Self {
        Sandbox {
            toolchains,
            ..Sandbox::default()
        }
    }

    /// Compiles `source` once and runs every test in order. Only a compile
    /// error stops execution early.
    pub fn run_tests(
        &self,
        source: &str,
        language: &str,
        tests: &[JudgeCase],
        limits: &ExecutionLimits,
    ) -> Result<ExecutionReport, SandboxError> {
        limits.validate()?;
        let tc = self
            .toolchains
            .get(language)
            .ok_or_else(|| SandboxError::ToolchainMissing(language.to_string()))?;
        if tests.is_empty() {
            return Err(SandboxError::NoTests);
        }
        let dir = tempfile::Builder::new().prefix("mapforge-judge-").tempdir()?;
        let src_path = dir.path().join(format!("main.{}", tc.file_ext));
        let bin_path = dir.path().join("main.bin");
        std::fs::write(&src_path, source)?;
        let (src, bin, wd) = (
            src_path.to_string_lossy().into_owned(),
            bin_path.to_string_lossy().into_owned(),
            dir.path().to_string_lossy().into_owned(),
        );
        let output_cap = (limits.output_limit_kb * 1024) as usize;

        if let Some(compile) = &tc.compile_cmd {
            let argv = toolchain::expand(compile, &src, &bin, &wd);
            let outcome = spawn(
                &argv,
                dir.path(),
                b"",
                &ProcLimits {
                    timeout: self.compile_timeout,
                    memory_bytes: None,
                    stdout_cap: output_cap,
                    stderr_cap: output_cap,
                },
                language,
            )?;
            if outcome.timed_out || !outcome.status.is_some_and(|s| s.success()) {
                let mut diag = lossy(&outcome.stderr);
                if diag.is_empty() {
                    diag = lossy(&outcome.stdout);
                }
                if outcome.timed_out {
                    diag.push_str("\ncompilation timed out");
                }
                return Ok(ExecutionReport {
                    per_test: Vec::new(),
                    overall: Verdict::CompileError,
                    compiled: false,
                    compile_output: diag,
                });
            }
        }

        let run_argv = toolchain::expand(&tc.run_cmd, &src, &bin, &wd);
        let proc_limits = ProcLimits {
            timeout: limits.time_limit(),
            memory_bytes: Some(limits.memory_limit_mb * 1024 * 1024),
            stdout_cap: output_cap,
            stderr_cap: output_cap,
        };
        let mut per_test = Vec::with_capacity(tests.len());
        for test in tests {
            let outcome = spawn(&run_argv, dir.path(), test.case.input.as_bytes(), &proc_limits, language)?;
            let stdout = lossy(&outcome.stdout);
            let stderr = lossy(&outcome.stderr);
            let exit_ok = outcome.status.is_some_and(|s| s.success());
            let verdict = if outcome.output_exceeded {
                Verdict::OutputLimit
            } else if outcome.timed_out {
                Verdict::TimeLimit
            } else if !exit_ok {
                if MEMORY_MARKERS.iter().any(|m| stderr.contains(m)) {
                    Verdict::MemoryLimit
                } else {
                    Verdict::RuntimeError
                }
            } else if compare_output(&stdout, &test.case.expected_output) {
                Verdict::Accepted
            } else {
                Verdict::WrongAnswer
            };
            per_test.push(TestResult {
                scope: test.scope,
                verdict,
                stdout,
                stderr,
                elapsed_ms: outcome.elapsed.as_millis() as u64,
                exit_code: outcome.status.and_then(|s| s.code()),
            });
        }
        let overall = per_test
            .iter()
            .map(|t| t.verdict)
            .find(|v| !v.is_accepted())
            .unwrap_or(Verdict::Accepted);
        Ok(ExecutionReport {
            per_test,
            overall,
            compiled: true,
            compile_output: String::new(),
        })
    }

    /// Judges `source` on the tests of `problem` selected by `scope`, using
    /// the problem's own limits.
    pub fn judge_problem(
        &self,
        problem: &Problem,
        source: &str,
        scope: Scope,
        output_limit_kb: u64,
    ) -> Result<ExecutionReport, SandboxError> {
        let cases = JudgeCase::from_problem(problem, scope);
        if cases.is_empty() {
            return Err(SandboxError::EmptyScope(scope));
        }
        self.run_tests(
            source,
            &problem.language,
            &cases,
            &ExecutionLimits::for_problem(problem, output_limit_kb),
        )
    }
}

fn spawn(
    argv: &[String],
    dir: &Path,
    input: &[u8],
    limits: &ProcLimits,
    language: &str,
) -> Result<process::ProcOutcome, SandboxError> {
    let _slot = EXEC_SLOTS.acquire();
    run_process(argv, dir, input, limits).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied if !argv[0].contains("main.bin") => {
            SandboxError::ToolchainMissing(format!("{language}: `{}` not runnable: {e}", argv[0]))
        }
        _ => SandboxError::Io(e),
    })
}
