//! The four-stage pipeline: retrieval, planning, coding and debugging, with
//! confidence-ordered plans and backtracking.
//!
//! Every agent call goes through [`stage_call`], which retries malformed
//! replies with a corrective message and falls back to lenient recovery.
//! Sample tests gate the debug loop; the final verdict is judged on all
//! tests of the problem.

mod prompts;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent_xml::{
    canonical_language, lenient_recover, parse_for_role, DocumentSchema, FormatFailure, ParsedResponse, Plan,
    PlanSet, RetrievalOutput,
};
use crate::corpus::Problem;
use crate::gateway::{complete, Backend, ChatMessage, ChatRequest, CostLedger, GatewayError, Usage};
use crate::role::AgentRole;
use crate::sandbox::{ExecutionReport, Sandbox, SandboxError, Scope, TestScope, Verdict, DEFAULT_OUTPUT_LIMIT_KB};

pub use prompts::{fill, PromptError, PromptTemplates, RoleTemplate, DEFAULT_TEMPLATES};

/// Longest excerpt of program input or output kept in records and prompts.
pub const MAX_EXCERPT_BYTES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Plans requested from the planning agent (k).
    pub plan_count: usize,
    /// Debug rounds allowed per plan (t).
    pub debug_rounds: usize,
    /// Corrective re-prompts after a malformed reply (r).
    pub format_retries: usize,
    pub output_limit_kb: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            plan_count: 3,
            debug_rounds: 5,
            format_retries: 2,
            output_limit_kb: DEFAULT_OUTPUT_LIMIT_KB,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.plan_count == 0 {
            return Err(PipelineError::InvalidConfig("plan_count must be at least 1".into()));
        }
        if self.output_limit_kb == 0 {
            return Err(PipelineError::InvalidConfig("output_limit_kb must be positive".into()));
        }
        Ok(())
    }
}

/// Where one role's requests go and how they are shaped.
#[derive(Clone)]
pub struct RoleBinding {
    pub backend: Arc<dyn Backend>,
    pub model: String,
    /// Served adapter name; sent as the request model when present.
    pub adapter: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl RoleBinding {
    pub fn new(backend: Arc<dyn Backend>, model: impl Into<String>) -> Self {
        RoleBinding {
            backend,
            model: model.into(),
            adapter: None,
            temperature: 0.0,
            max_tokens: 2048,
        }
    }

    pub fn request_model(&self) -> &str {
        self.adapter.as_deref().unwrap_or(&self.model)
    }
}

impl std::fmt::Debug for RoleBinding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RoleBinding")
            .field("backend", &self.backend.id())
            .field("model", &self.model)
            .field("adapter", &self.adapter)
            .field("temperature", &self.temperature)
            .field("max_tokens", &self.max_tokens)
            .finish()
    }
}

#[derive(Debug, Clone, Default)]
pub struct RoleBindings(BTreeMap<AgentRole, RoleBinding>);

impl RoleBindings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Binds every role in `roles` to the same backend and model.
    pub fn uniform(backend: Arc<dyn Backend>, model: &str, roles: &[AgentRole]) -> Self {
        let mut b = Self::new();
        for r in roles {
            b.insert(*r, RoleBinding::new(backend.clone(), model));
        }
        b
    }

    pub fn insert(&mut self, role: AgentRole, binding: RoleBinding) -> &mut Self {
        self.0.insert(role, binding);
        self
    }

    pub fn get(&self, role: AgentRole) -> Result<&RoleBinding, PipelineError> {
        self.0.get(&role).ok_or(PipelineError::MissingBackend(role))
    }

    pub fn missing(&self, roles: &[AgentRole]) -> Vec<AgentRole> {
        roles.iter().copied().filter(|r| !self.0.contains_key(r)).collect()
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no backend configured for the {0} role")]
    MissingBackend(AgentRole),
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

/// A failing test as shown to the debugger and the supervisor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedTest {
    pub index: usize,
    pub scope: TestScope,
    pub verdict: Verdict,
    pub input: String,
    pub expected: String,
    pub stdout: String,
    pub stderr: String,
}

impl FailedTest {
    pub fn render(&self) -> String {
        let mut out = format!("Verdict: {}\n", self.verdict);
        if self.verdict == Verdict::CompileError {
            out.push_str(&format!("Compiler output:\n{}\n", self.stderr));
            return out;
        }
        out.push_str(&format!("Input:\n{}\n", self.input.trim_end_matches('\n')));
        out.push_str(&format!("Expected output:\n{}\n", self.expected.trim_end_matches('\n')));
        match self.verdict {
            Verdict::TimeLimit => out.push_str("Program output: none, the program exceeded the time limit\n"),
            _ => out.push_str(&format!("Program output:\n{}\n", self.stdout.trim_end_matches('\n'))),
        }
        if !self.stderr.is_empty() {
            out.push_str(&format!("Standard error:\n{}\n", self.stderr.trim_end_matches('\n')));
        }
        out
    }
}

/// Result of judging one program on a scope of tests. Timings are left out
/// so that records are reproducible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgement {
    pub scope: Scope,
    pub verdict: Verdict,
    pub tests_run: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_test: Option<FailedTest>,
}

fn excerpt(s: &str) -> String {
    if s.len() <= MAX_EXCERPT_BYTES {
        return s.to_string();
    }
    let mut end = MAX_EXCERPT_BYTES;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}\n[truncated]", &s[..end])
}

fn judgement_from(report: &ExecutionReport, cases: &[crate::sandbox::JudgeCase], scope: Scope) -> Judgement {
    let failed_test = if !report.compiled {
        cases.first().map(|c| FailedTest {
            index: 0,
            scope: c.scope,
            verdict: Verdict::CompileError,
            input: String::new(),
            expected: String::new(),
            stdout: String::new(),
            stderr: excerpt(&report.compile_output),
        })
    } else {
        report.first_failure().map(|i| {
            let t = &report.per_test[i];
            let timed_out = t.verdict == Verdict::TimeLimit;
            FailedTest {
                index: i,
                scope: t.scope,
                verdict: t.verdict,
                input: excerpt(&cases[i].case.input),
                expected: excerpt(&cases[i].case.expected_output),
                stdout: if timed_out { String::new() } else { excerpt(&t.stdout) },
                stderr: if timed_out { String::new() } else { excerpt(&t.stderr) },
            }
        })
    };
    Judgement {
        scope,
        verdict: report.overall,
        tests_run: report.per_test.len(),
        failed_test,
    }
}

/// Decides verdicts for candidate programs.
pub trait Judge: Send + Sync {
    fn judge(&self, p: &Problem, code: &str, scope: Scope, output_limit_kb: u64) -> Result<Judgement, SandboxError>;
}

impl Judge for Sandbox {
    /// Runs the selected tests in the sandbox. A scope with no tests is
    /// vacuously accepted.
    fn judge(&self, p: &Problem, code: &str, scope: Scope, output_limit_kb: u64) -> Result<Judgement, SandboxError> {
        let cases = crate::sandbox::JudgeCase::from_problem(p, scope);
        if cases.is_empty() {
            return Ok(Judgement {
                scope,
                verdict: Verdict::Accepted,
                tests_run: 0,
                failed_test: None,
            });
        }
        let limits = crate::sandbox::ExecutionLimits::for_problem(p, output_limit_kb);
        let report = self.run_tests(code, &p.language, &cases, &limits)?;
        Ok(judgement_from(&report, &cases, scope))
    }
}

/// A judge backed by a function from (problem, code, scope) to verdict, for
/// tests that exercise control flow without running programs.
pub struct FnJudge<F>(pub F);

impl<F> Judge for FnJudge<F>
where
    F: Fn(&Problem, &str, Scope) -> Verdict + Send + Sync,
{
    fn judge(&self, p: &Problem, code: &str, scope: Scope, _output_limit_kb: u64) -> Result<Judgement, SandboxError> {
        let verdict = (self.0)(p, code, scope);
        let failed_test = (verdict != Verdict::Accepted).then(|| FailedTest {
            index: 0,
            scope: if scope == Scope::HiddenOnly { TestScope::Hidden } else { TestScope::Sample },
            verdict,
            input: p.sample_tests.first().map(|t| t.input.clone()).unwrap_or_default(),
            expected: p.sample_tests.first().map(|t| t.expected_output.clone()).unwrap_or_default(),
            stdout: String::new(),
            stderr: String::new(),
        });
        Ok(Judgement {
            scope,
            verdict,
            tests_run: 1,
            failed_test,
        })
    }
}

/// One agent invocation, including any corrective retries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub role: AgentRole,
    pub model: String,
    /// Position of the plan being worked on, in visiting order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_index: Option<usize>,
    /// Debug round within the plan, starting at 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<usize>,
    /// The runtime prompt, without corrective turns or supervisor feedback.
    pub prompt: Vec<ChatMessage>,
    /// Supervisor feedback appended to the prompt when this stage was sent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
    /// The last reply received.
    pub raw_response: String,
    /// Earlier replies that failed to parse, oldest first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected_responses: Vec<String>,
    pub parsed: Option<ParsedResponse>,
    /// Failures from every attempt, in attempt order.
    pub failures: Vec<FormatFailure>,
    pub recovered: bool,
    pub usage: Usage,
    pub latency_ms: u64,
    pub attempt: u32,
    /// Sample-scope judging of the code this stage produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judgement: Option<Judgement>,
}

impl StageRecord {
    pub fn ledger(&self) -> CostLedger {
        CostLedger {
            input_tokens: self.usage.prompt_tokens,
            output_tokens: self.usage.completion_tokens,
            calls: self.attempt as u64,
            wall_time_ms: self.latency_ms,
        }
    }

    /// True when the first reply parsed strictly.
    pub fn is_clean(&self) -> bool {
        self.parsed.is_some() && !self.recovered && self.failures.is_empty()
    }

    pub fn code(&self) -> Option<&str> {
        self.parsed.as_ref().and_then(ParsedResponse::as_code)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum AbortReason {
    /// Malformed after every retry and not recoverable.
    Format(Vec<FormatFailure>),
    /// The backend failed (transport error, replay miss, ...).
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineAbort {
    pub stage: AgentRole,
    pub reason: AbortReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub problem_id: String,
    pub stages: Vec<StageRecord>,
    pub plans_tried: usize,
    pub debug_iterations_used: usize,
    /// Retrieval output the run worked from, invoked or reused.
    pub retrieval: Option<RetrievalOutput>,
    /// Plans in visiting order.
    pub plans: Vec<Plan>,
    pub final_source: Option<String>,
    /// Index into `stages` of the record that produced `final_source`.
    pub final_stage: Option<usize>,
    pub sample_verdict: Option<Verdict>,
    pub hidden_verdict: Option<Verdict>,
    pub final_judgement: Option<Judgement>,
    pub solved_without_debug: bool,
    pub ledger: CostLedger,
    pub abort: Option<PipelineAbort>,
}

impl Trajectory {
    fn new(problem_id: &str) -> Self {
        Trajectory {
            problem_id: problem_id.to_string(),
            stages: Vec::new(),
            plans_tried: 0,
            debug_iterations_used: 0,
            retrieval: None,
            plans: Vec::new(),
            final_source: None,
            final_stage: None,
            sample_verdict: None,
            hidden_verdict: None,
            final_judgement: None,
            solved_without_debug: false,
            ledger: CostLedger::default(),
            abort: None,
        }
    }

    pub fn is_accepted(&self) -> bool {
        self.hidden_verdict == Some(Verdict::Accepted)
    }

    pub fn stages_for(&self, role: AgentRole) -> impl Iterator<Item = &StageRecord> {
        self.stages.iter().filter(move |s| s.role == role)
    }

    pub fn format_failure_count(&self) -> usize {
        self.stages.iter().map(|s| s.failures.len()).sum()
    }

    pub fn final_record(&self) -> Option<&StageRecord> {
        self.final_stage.map(|i| &self.stages[i])
    }

    fn push(&mut self, rec: StageRecord) -> usize {
        self.ledger.merge(&rec.ledger());
        self.stages.push(rec);
        self.stages.len() - 1
    }
}

/// Plans in descending confidence; ties keep generation order.
pub fn order_plans(ps: &PlanSet) -> Vec<Plan> {
    let mut plans = ps.plans.clone();
    plans.sort_by_key(|p| std::cmp::Reverse(p.confidence));
    plans
}

pub fn should_debug(sample_verdict: Verdict, rounds_used: usize, t: usize) -> bool {
    sample_verdict != Verdict::Accepted && rounds_used < t
}

/// Everything one stage call needs besides the backend.
#[derive(Debug, Clone)]
pub struct StageInput<'a> {
    pub role: AgentRole,
    pub prompt: Vec<ChatMessage>,
    pub feedback: Option<&'a str>,
    pub language: &'a str,
    pub plan_index: Option<usize>,
    pub round: Option<usize>,
}

/// A backend error during a stage; `partial` holds the attempts that did return.
#[derive(Debug)]
pub struct StageBackendError {
    pub error: GatewayError,
    pub partial: StageRecord,
}

/// Reply format description substituted for `{format}`.
pub fn format_hint(role: AgentRole, language: &str) -> String {
    match DocumentSchema::for_role(role) {
        Some(schema) => schema.skeleton().trim_end().to_string(),
        None => format!(
            "a single fenced code block:\n```{}\n<complete program>\n```",
            canonical_language(language)
        ),
    }
}

/// Calls the role's backend, strictly parses the reply, re-prompts up to
/// `retries` times with a corrective message, then tries lenient recovery.
///
/// Unrecoverable format failures are reported through the record
/// (`parsed` is `None`); only backend errors are returned as `Err`.
pub fn stage_call(
    input: StageInput<'_>,
    retries: usize,
    binding: &RoleBinding,
    prompts: &PromptTemplates,
) -> Result<StageRecord, Box<StageBackendError>> {
    let mut rec = StageRecord {
        role: input.role,
        model: binding.request_model().to_string(),
        plan_index: input.plan_index,
        round: input.round,
        prompt: input.prompt,
        feedback: input.feedback.map(str::to_string),
        raw_response: String::new(),
        rejected_responses: Vec::new(),
        parsed: None,
        failures: Vec::new(),
        recovered: false,
        usage: Usage::default(),
        latency_ms: 0,
        attempt: 0,
        judgement: None,
    };
    let mut base = rec.prompt.clone();
    if let Some(fb) = input.feedback {
        base.push(prompts.feedback(fb));
    }
    let format = format_hint(input.role, input.language);
    let mut last_failures: Vec<FormatFailure> = Vec::new();
    for attempt in 0..=retries {
        let mut messages = base.clone();
        if attempt > 0 {
            let summary = last_failures.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; ");
            messages.push(ChatMessage::assistant(rec.raw_response.clone()));
            messages.push(prompts.correction(&summary, &format));
        }
        let req = ChatRequest {
            model: binding.request_model().to_string(),
            messages,
            temperature: binding.temperature,
            max_tokens: binding.max_tokens,
            stop: None,
        };
        let resp = match complete(&req, binding.backend.as_ref()) {
            Ok(r) => r,
            Err(error) => return Err(Box::new(StageBackendError { error, partial: rec })),
        };
        rec.attempt += 1;
        rec.usage += resp.usage;
        rec.latency_ms += resp.latency_ms;
        if attempt > 0 {
            rec.rejected_responses.push(std::mem::take(&mut rec.raw_response));
        }
        rec.raw_response = resp.content;
        match parse_for_role(input.role, &rec.raw_response, input.language) {
            Ok(parsed) => {
                rec.parsed = Some(parsed);
                return Ok(rec);
            }
            Err(failures) => {
                rec.failures.extend(failures.iter().cloned());
                last_failures = failures;
            }
        }
    }
    if let Some(schema) = DocumentSchema::for_role(input.role) {
        if let Some(value) = lenient_recover(&rec.raw_response, schema) {
            rec.parsed = Some(value);
            rec.recovered = true;
        }
    }
    Ok(rec)
}

/// Upstream values to reuse and feedback to inject when a run is repeated
/// under supervision.
#[derive(Debug, Clone, Default)]
pub struct Seed {
    pub retrieval: Option<RetrievalOutput>,
    pub plans: Option<PlanSet>,
    /// Feedback appended to every prompt sent to this role.
    pub feedback: Option<(AgentRole, String)>,
}

impl Seed {
    fn feedback_for(&self, role: AgentRole) -> Option<&str> {
        match &self.feedback {
            Some((r, fb)) if *r == role => Some(fb.as_str()),
            _ => None,
        }
    }
}

/// A configured pipeline: bindings, templates and judge.
#[derive(Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub roles: RoleBindings,
    pub prompts: PromptTemplates,
    pub judge: Arc<dyn Judge>,
}

enum Step<T> {
    Done(T),
    Abort,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, roles: RoleBindings) -> Self {
        Pipeline {
            config,
            roles,
            prompts: PromptTemplates::default(),
            judge: Arc::new(Sandbox::default()),
        }
    }

    pub fn with_judge(mut self, judge: Arc<dyn Judge>) -> Self {
        self.judge = judge;
        self
    }

    pub fn with_prompts(mut self, prompts: PromptTemplates) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.config.validate()?;
        match self.roles.missing(&AgentRole::PIPELINE).first() {
            Some(r) => Err(PipelineError::MissingBackend(*r)),
            None => Ok(()),
        }
    }

    pub fn run_problem(&self, p: &Problem) -> Result<Trajectory, PipelineError> {
        self.run_seeded(p, &Seed::default())
    }

    fn stage(
        &self,
        traj: &mut Trajectory,
        input: StageInput<'_>,
    ) -> Result<Step<(usize, ParsedResponse)>, PipelineError> {
        let role = input.role;
        let binding = self.roles.get(role)?;
        match stage_call(input, self.config.format_retries, binding, &self.prompts) {
            Ok(rec) => {
                let parsed = rec.parsed.clone();
                let failures = rec.failures.clone();
                let idx = traj.push(rec);
                match parsed {
                    Some(v) => Ok(Step::Done((idx, v))),
                    None => {
                        let last = failures.into_iter().rev().take(1).collect();
                        traj.abort = Some(PipelineAbort {
                            stage: role,
                            reason: AbortReason::Format(last),
                        });
                        Ok(Step::Abort)
                    }
                }
            }
            Err(e) => {
                if e.partial.attempt > 0 {
                    traj.push(e.partial);
                }
                traj.abort = Some(PipelineAbort {
                    stage: role,
                    reason: AbortReason::Backend(e.error.to_string()),
                });
                Ok(Step::Abort)
            }
        }
    }

    /// Runs the pipeline, skipping stages whose output `seed` supplies.
    pub fn run_seeded(&self, p: &Problem, seed: &Seed) -> Result<Trajectory, PipelineError> {
        self.config.validate()?;
        let mut traj = Trajectory::new(&p.id);
        let lang = canonical_language(&p.language);
        let statement = p.statement.as_str();

        let retrieval = match &seed.retrieval {
            Some(r) => r.clone(),
            None => {
                let prompt = self.prompts.render(
                    AgentRole::Retrieval,
                    &[
                        ("statement", statement),
                        ("language", &lang),
                        ("format", &format_hint(AgentRole::Retrieval, &lang)),
                    ],
                );
                let input = StageInput {
                    role: AgentRole::Retrieval,
                    prompt,
                    feedback: seed.feedback_for(AgentRole::Retrieval),
                    language: &lang,
                    plan_index: None,
                    round: None,
                };
                match self.stage(&mut traj, input)? {
                    Step::Done((_, v)) => v.as_retrieval().cloned().expect("retrieval parse"),
                    Step::Abort => return Ok(traj),
                }
            }
        };
        traj.retrieval = Some(retrieval.clone());

        let plan_set = match &seed.plans {
            Some(ps) => ps.clone(),
            None => {
                let k = self.config.plan_count.to_string();
                let prompt = self.prompts.render(
                    AgentRole::Planning,
                    &[
                        ("statement", statement),
                        ("language", &lang),
                        ("algorithm", &retrieval.algorithm_name),
                        ("tutorial", &retrieval.tutorial),
                        ("plan_count", &k),
                        ("format", &format_hint(AgentRole::Planning, &lang)),
                    ],
                );
                let input = StageInput {
                    role: AgentRole::Planning,
                    prompt,
                    feedback: seed.feedback_for(AgentRole::Planning),
                    language: &lang,
                    plan_index: None,
                    round: None,
                };
                match self.stage(&mut traj, input)? {
                    Step::Done((_, v)) => v.as_plans().cloned().expect("planning parse"),
                    Step::Abort => return Ok(traj),
                }
            }
        };
        let generated = PlanSet {
            plans: plan_set.plans.into_iter().take(self.config.plan_count).collect(),
        };
        traj.plans = order_plans(&generated);

        // (stage index, code, sample judgement) of the latest program.
        let mut current: Option<(usize, String, Judgement)> = None;
        'plans: for (pi, plan) in traj.plans.clone().iter().enumerate() {
            traj.plans_tried += 1;
            let prompt = self.prompts.render(
                AgentRole::Coding,
                &[
                    ("statement", statement),
                    ("language", &lang),
                    ("algorithm", &retrieval.algorithm_name),
                    ("tutorial", &retrieval.tutorial),
                    ("plan", &plan.steps),
                    ("format", &format_hint(AgentRole::Coding, &lang)),
                ],
            );
            let input = StageInput {
                role: AgentRole::Coding,
                prompt,
                feedback: seed.feedback_for(AgentRole::Coding),
                language: &lang,
                plan_index: Some(pi),
                round: None,
            };
            let (idx, code) = match self.stage(&mut traj, input)? {
                Step::Done((idx, v)) => (idx, v.as_code().expect("code parse").to_string()),
                Step::Abort => break 'plans,
            };
            let j = self.judge.judge(p, &code, Scope::SampleOnly, self.config.output_limit_kb)?;
            traj.stages[idx].judgement = Some(j.clone());
            current = Some((idx, code, j));

            let mut rounds = 0;
            while let Some((_, code, j)) = current.as_ref().filter(|c| should_debug(c.2.verdict, rounds, self.config.debug_rounds)) {
                rounds += 1;
                traj.debug_iterations_used += 1;
                let failed = j.failed_test.as_ref().map(FailedTest::render).unwrap_or_default();
                let prompt = self.prompts.render(
                    AgentRole::Debugging,
                    &[
                        ("statement", statement),
                        ("language", &lang),
                        ("algorithm", &retrieval.algorithm_name),
                        ("plan", &plan.steps),
                        ("code", code),
                        ("failed_test", failed.trim_end()),
                        ("format", &format_hint(AgentRole::Debugging, &lang)),
                    ],
                );
                let input = StageInput {
                    role: AgentRole::Debugging,
                    prompt,
                    feedback: seed.feedback_for(AgentRole::Debugging),
                    language: &lang,
                    plan_index: Some(pi),
                    round: Some(rounds),
                };
                let (idx, patched) = match self.stage(&mut traj, input)? {
                    Step::Done((idx, v)) => (idx, v.as_code().expect("code parse").to_string()),
                    Step::Abort => break 'plans,
                };
                let j = self.judge.judge(p, &patched, Scope::SampleOnly, self.config.output_limit_kb)?;
                traj.stages[idx].judgement = Some(j.clone());
                current = Some((idx, patched, j));
            }
            if current.as_ref().is_some_and(|c| c.2.verdict == Verdict::Accepted) {
                break;
            }
        }

        if let Some((idx, code, sample)) = current {
            let fin = self.judge.judge(p, &code, Scope::All, self.config.output_limit_kb)?;
            traj.final_stage = Some(idx);
            traj.final_source = Some(code);
            traj.sample_verdict = Some(sample.verdict);
            traj.hidden_verdict = Some(fin.verdict);
            traj.final_judgement = Some(fin);
            traj.solved_without_debug = traj.is_accepted() && traj.debug_iterations_used == 0;
        }
        Ok(traj)
    }
}
