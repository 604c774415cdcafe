//! Turns pipeline runs into role-tagged training examples.
//!
//! Distillation keeps the stage outputs of trajectories whose final program
//! passes every test. Supervision takes a failed trajectory, asks a
//! supervisor model which upstream agent is to blame, regenerates only that
//! stage with the feedback attached, replays the downstream stages and keeps
//! the regenerated output if the new program passes. Stored inputs are the
//! runtime prompts, never the feedback.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent_xml::{BlamedRole, PlanSet};
use crate::corpus::Problem;
use crate::gateway::ChatMessage;
use crate::orchestrator::{
    format_hint, stage_call, Pipeline, PipelineError, Seed, StageInput, StageRecord, Trajectory,
};
use crate::role::AgentRole;
use crate::sandbox::Verdict;

pub const DEFAULT_MAX_SUPERVISION_ROUNDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Distilled,
    SupervisorCorrected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub role: AgentRole,
    pub input: Vec<ChatMessage>,
    pub output: String,
    pub provenance: Provenance,
    pub problem_id: String,
    pub source_model: String,
}

impl TrainingExample {
    fn from_stage(rec: &StageRecord, problem_id: &str, provenance: Provenance) -> Self {
        TrainingExample {
            role: rec.role,
            input: rec.prompt.clone(),
            output: rec.raw_response.clone(),
            provenance,
            problem_id: problem_id.to_string(),
            source_model: rec.model.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// The final program did not pass every test.
    NotPassing,
    /// The stage needed lenient recovery, so its raw reply is malformed.
    RecoveredStage,
    /// The trajectory has no usable stage for the role.
    NoStage,
    /// The passing program was produced by a different stage.
    NotFinalProgram,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skip {
    pub problem_id: String,
    pub role: AgentRole,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Distillation {
    pub examples: Vec<TrainingExample>,
    pub skipped: Vec<Skip>,
}

impl Distillation {
    pub fn for_role(&self, role: AgentRole) -> Vec<TrainingExample> {
        self.examples.iter().filter(|e| e.role == role).cloned().collect()
    }

    fn extend(&mut self, other: Distillation) {
        self.examples.extend(other.examples);
        self.skipped.extend(other.skipped);
    }
}

/// True iff the trajectory's final program was accepted on all tests.
pub fn pass_filter(traj: &Trajectory) -> bool {
    traj.final_source.is_some() && traj.is_accepted()
}

/// The stage of `role` whose output survives in the passing program.
fn contributing_stage(traj: &Trajectory, role: AgentRole) -> Result<&StageRecord, SkipReason> {
    let stage = match role {
        AgentRole::Retrieval | AgentRole::Planning => traj.stages_for(role).last(),
        AgentRole::Coding | AgentRole::Debugging => match traj.final_record() {
            Some(rec) if rec.role == role => Some(rec),
            Some(_) => return Err(SkipReason::NotFinalProgram),
            None => None,
        },
        AgentRole::Supervisor => None,
    };
    match stage {
        Some(s) if s.recovered => Err(SkipReason::RecoveredStage),
        Some(s) if s.parsed.is_some() => Ok(s),
        _ => Err(SkipReason::NoStage),
    }
}

fn distill_one(traj: &Trajectory, role: AgentRole) -> Distillation {
    let mut out = Distillation::default();
    let skip = |reason| Skip {
        problem_id: traj.problem_id.clone(),
        role,
        reason,
    };
    if !pass_filter(traj) {
        out.skipped.push(skip(SkipReason::NotPassing));
        return out;
    }
    match contributing_stage(traj, role) {
        Ok(rec) => out
            .examples
            .push(TrainingExample::from_stage(rec, &traj.problem_id, Provenance::Distilled)),
        Err(reason) => out.skipped.push(skip(reason)),
    }
    out
}

/// Distills examples for `roles` from strong-model trajectories. Coding and
/// debugging examples come only from the stage that produced the passing
/// program.
pub fn distill_roles(trajs: &[Trajectory], roles: &[AgentRole]) -> Distillation {
    let mut out = Distillation::default();
    for role in roles {
        for t in trajs {
            out.extend(distill_one(t, *role));
        }
    }
    out
}

/// One retrieval example per passing trajectory with a clean retrieval stage.
pub fn distill_retrieval(strong_trajs: &[Trajectory]) -> Distillation {
    distill_roles(strong_trajs, &[AgentRole::Retrieval])
}

/// One debugging example per trajectory whose first program failed its
/// samples and whose accepted program is a debugger patch.
pub fn distill_debugging(mixed_trajs: &[Trajectory]) -> Distillation {
    distill_roles(mixed_trajs, &[AgentRole::Debugging])
}

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("verdict maps cover different problems: only in strong {only_strong:?}, only in small {only_small:?}")]
    DomainMismatch {
        only_strong: Vec<String>,
        only_small: Vec<String>,
    },
    #[error("supervise needs a failed trajectory, but {0} was accepted")]
    AlreadyAccepted(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Final verdict per problem id; `None` when no program was produced.
pub fn verdict_map(trajs: &[Trajectory]) -> BTreeMap<String, Option<Verdict>> {
    trajs.iter().map(|t| (t.problem_id.clone(), t.hidden_verdict)).collect()
}

/// Ids where the strong run was accepted and the small run was not.
pub fn select_supervision_candidates(
    strong: &BTreeMap<String, Option<Verdict>>,
    small: &BTreeMap<String, Option<Verdict>>,
) -> Result<Vec<String>, CurationError> {
    let a: BTreeSet<&String> = strong.keys().collect();
    let b: BTreeSet<&String> = small.keys().collect();
    if a != b {
        return Err(CurationError::DomainMismatch {
            only_strong: a.difference(&b).map(|s| s.to_string()).collect(),
            only_small: b.difference(&a).map(|s| s.to_string()).collect(),
        });
    }
    Ok(strong
        .iter()
        .filter(|(id, v)| **v == Some(Verdict::Accepted) && small[*id] != Some(Verdict::Accepted))
        .map(|(id, _)| id.clone())
        .collect())
}

/// One supervision round, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionRound {
    pub supervisor: StageRecord,
    pub blamed_role: Option<AgentRole>,
    pub feedback: Option<String>,
    /// The regenerated run; only invoked stages are recorded.
    pub trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisionOutcome {
    Corrected,
    Exhausted,
    SupervisorFormatFailure,
    SupervisorBackendFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationRecord {
    pub problem_id: String,
    pub examples: Vec<TrainingExample>,
    /// Feedback behind the stored example; audit only, never training input.
    pub supervisor_feedback: Option<String>,
    pub blamed_role: Option<AgentRole>,
    pub iterations: usize,
    pub outcome: SupervisionOutcome,
    pub rounds: Vec<SupervisionRound>,
}

fn render_plans(plans: &[crate::agent_xml::Plan]) -> String {
    if plans.is_empty() {
        return "(no plans)".to_string();
    }
    plans
        .iter()
        .enumerate()
        .map(|(i, p)| format!("Plan {} (confidence {}):\n{}", i + 1, p.confidence, p.steps.trim()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn render_test_results(traj: &Trajectory) -> String {
    let mut lines = Vec::new();
    for s in &traj.stages {
        let Some(j) = &s.judgement else { continue };
        let plan = s.plan_index.map_or(0, |i| i + 1);
        match s.round {
            Some(r) => lines.push(format!("Plan {plan}, debug round {r}: {} on sample tests", j.verdict)),
            None => lines.push(format!("Plan {plan}, initial program: {} on sample tests", j.verdict)),
        }
    }
    match &traj.final_judgement {
        Some(j) => {
            lines.push(format!("Final program on all tests: {}", j.verdict));
            if let Some(ft) = &j.failed_test {
                lines.push(format!("First failing test:\n{}", ft.render().trim_end()));
            }
        }
        None => lines.push("No program was produced.".to_string()),
    }
    lines.join("\n")
}

/// The supervisor's runtime prompt for a failed trajectory.
pub fn supervisor_prompt(pipeline: &Pipeline, p: &Problem, traj: &Trajectory) -> Vec<ChatMessage> {
    let lang = crate::agent_xml::canonical_language(&p.language);
    let (algorithm, tutorial) = traj
        .retrieval
        .as_ref()
        .map(|r| (r.algorithm_name.as_str(), r.tutorial.as_str()))
        .unwrap_or(("(none)", ""));
    let plans = render_plans(&traj.plans);
    let results = render_test_results(traj);
    pipeline.prompts.render(
        AgentRole::Supervisor,
        &[
            ("statement", p.statement.as_str()),
            ("language", &lang),
            ("algorithm", algorithm),
            ("tutorial", tutorial),
            ("plans", &plans),
            ("code", traj.final_source.as_deref().unwrap_or("(no program)")),
            ("test_results", &results),
            ("format", &format_hint(AgentRole::Supervisor, &lang)),
        ],
    )
}

/// The seed that regenerates only `blamed` and replays what follows it.
fn seed_for(blamed: BlamedRole, feedback: &str, traj: &Trajectory) -> Seed {
    let fb = Some((blamed.agent_role(), feedback.to_string()));
    match blamed {
        BlamedRole::Retrieval => Seed {
            feedback: fb,
            ..Seed::default()
        },
        BlamedRole::Planning => Seed {
            retrieval: traj.retrieval.clone(),
            feedback: fb,
            ..Seed::default()
        },
        BlamedRole::Coding => Seed {
            retrieval: traj.retrieval.clone(),
            plans: Some(PlanSet {
                plans: traj.plans.clone(),
            }),
            feedback: fb,
        },
    }
}

/// True when `feedback` occurs in any message of `input`.
pub fn leaks_feedback(input: &[ChatMessage], feedback: &str) -> bool {
    !feedback.is_empty() && input.iter().any(|m| m.content.contains(feedback))
}

/// Supervisor-guided correction of one failed trajectory.
///
/// `pipeline` must bind the supervisor role in addition to the four
/// pipeline roles. Each round regenerates only the blamed stage; the loop
/// stops at the first accepted regeneration or after `max_rounds`.
pub fn supervise(
    traj: &Trajectory,
    p: &Problem,
    pipeline: &Pipeline,
    max_rounds: usize,
) -> Result<CurationRecord, CurationError> {
    if traj.is_accepted() {
        return Err(CurationError::AlreadyAccepted(traj.problem_id.clone()));
    }
    let supervisor = pipeline.roles.get(AgentRole::Supervisor)?;
    let lang = crate::agent_xml::canonical_language(&p.language);
    let mut record = CurationRecord {
        problem_id: p.id.clone(),
        examples: Vec::new(),
        supervisor_feedback: None,
        blamed_role: None,
        iterations: 0,
        outcome: SupervisionOutcome::Exhausted,
        rounds: Vec::new(),
    };
    let mut current = traj.clone();
    for _ in 0..max_rounds {
        record.iterations += 1;
        let input = StageInput {
            role: AgentRole::Supervisor,
            prompt: supervisor_prompt(pipeline, p, &current),
            feedback: None,
            language: &lang,
            plan_index: None,
            round: None,
        };
        let rec = match stage_call(input, pipeline.config.format_retries, supervisor, &pipeline.prompts) {
            Ok(rec) => rec,
            Err(e) => {
                record.rounds.push(SupervisionRound {
                    supervisor: e.partial,
                    blamed_role: None,
                    feedback: None,
                    trajectory: None,
                });
                record.outcome = SupervisionOutcome::SupervisorBackendFailure;
                return Ok(record);
            }
        };
        let Some(blame) = rec.parsed.as_ref().and_then(|v| v.as_blame()).cloned() else {
            record.rounds.push(SupervisionRound {
                supervisor: rec,
                blamed_role: None,
                feedback: None,
                trajectory: None,
            });
            record.outcome = SupervisionOutcome::SupervisorFormatFailure;
            return Ok(record);
        };
        let role = blame.blamed_role.agent_role();
        let regenerated = pipeline.run_seeded(p, &seed_for(blame.blamed_role, &blame.feedback, &current))?;
        let example = pass_filter(&regenerated)
            .then(|| contributing_stage(&regenerated, role).ok())
            .flatten()
            .map(|stage| TrainingExample::from_stage(stage, &p.id, Provenance::SupervisorCorrected))
            .filter(|ex| !leaks_feedback(&ex.input, &blame.feedback));
        record.rounds.push(SupervisionRound {
            supervisor: rec,
            blamed_role: Some(role),
            feedback: Some(blame.feedback.clone()),
            trajectory: Some(regenerated.clone()),
        });
        if let Some(ex) = example {
            record.examples.push(ex);
            record.blamed_role = Some(role);
            record.supervisor_feedback = Some(blame.feedback);
            record.outcome = SupervisionOutcome::Corrected;
            return Ok(record);
        }
        current = regenerated;
    }
    Ok(record)
}

/// Indices of examples whose input contains their record's feedback text.
pub fn audit_feedback(records: &[CurationRecord]) -> Vec<(String, usize)> {
    let mut hits = Vec::new();
    for r in records {
        let feedbacks: Vec<&str> = r
            .rounds
            .iter()
            .filter_map(|round| round.feedback.as_deref())
            .chain(r.supervisor_feedback.as_deref())
            .collect();
        for (i, ex) in r.examples.iter().enumerate() {
            if feedbacks.iter().any(|fb| leaks_feedback(&ex.input, fb)) {
                hits.push((r.problem_id.clone(), i));
            }
        }
    }
    hits
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(pairs: &[(&str, Option<Verdict>)]) -> BTreeMap<String, Option<Verdict>> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    const OK: Option<Verdict> = Some(Verdict::Accepted);
    const WA: Option<Verdict> = Some(Verdict::WrongAnswer);

    #[test]
    fn candidates_are_strong_pass_small_fail() {
        let strong = v(&[("A", OK), ("B", OK), ("C", WA)]);
        let small = v(&[("A", OK), ("B", WA), ("C", WA)]);
        assert_eq!(select_supervision_candidates(&strong, &small).unwrap(), ["B"]);
        assert!(select_supervision_candidates(&strong, &strong).unwrap().is_empty());
        let small_none = v(&[("A", None), ("B", OK), ("C", WA)]);
        assert_eq!(select_supervision_candidates(&strong, &small_none).unwrap(), ["A"]);
    }

    #[test]
    fn disjoint_domains_rejected() {
        let strong = v(&[("A", OK)]);
        let small = v(&[("B", OK)]);
        match select_supervision_candidates(&strong, &small) {
            Err(CurationError::DomainMismatch { only_strong, only_small }) => {
                assert_eq!(only_strong, ["A"]);
                assert_eq!(only_small, ["B"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn leak_detection() {
        let input = vec![ChatMessage::user("solve x")];
        assert!(leaks_feedback(&input, "solve"));
        assert!(!leaks_feedback(&input, "check parity"));
        assert!(!leaks_feedback(&input, ""));
    }
}
