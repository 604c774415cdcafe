//! Scripted agents and problems shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use mapforge::agent_xml::{Plan, PlanSet, RetrievalOutput};
use mapforge::corpus::{Problem, TestCase};
use mapforge::gateway::{Backend, ScriptedBackend};
use mapforge::orchestrator::{FnJudge, Judge, Pipeline, PipelineConfig, RoleBinding, RoleBindings};
use mapforge::sandbox::{Scope, Verdict};
use mapforge::AgentRole;

pub fn problem(id: &str) -> Problem {
    Problem {
        id: id.to_string(),
        statement: format!("Problem {id}: print the sum of two integers."),
        sample_tests: vec![TestCase::new("1 2\n", "3\n")],
        hidden_tests: vec![TestCase::new("5 7\n", "12\n"), TestCase::new("-1 1\n", "0\n")],
        language: "python".into(),
        source: "fixture".into(),
        time_limit: 5.0,
        memory_limit: 512,
    }
}

pub fn retrieval_xml(name: &str) -> String {
    RetrievalOutput {
        algorithm_name: name.into(),
        tutorial: format!("How to apply {name}."),
    }
    .to_xml()
}

pub fn plans_xml(plans: &[(&str, u8)]) -> String {
    PlanSet {
        plans: plans
            .iter()
            .map(|(s, c)| Plan {
                steps: s.to_string(),
                confidence: *c,
            })
            .collect(),
    }
    .to_xml()
}

pub fn code(body: &str) -> String {
    format!("Here is the program.\n```python\n{body}\n```\n")
}

/// Judge keyed on markers in the program text: `PASS_ALL` passes every
/// test, `PASS_SAMPLE` passes only the sample tests, anything else fails.
pub fn marker_judge() -> Arc<dyn Judge> {
    Arc::new(FnJudge(|_p: &Problem, code: &str, scope: Scope| {
        if code.contains("PASS_ALL") || (code.contains("PASS_SAMPLE") && scope == Scope::SampleOnly) {
            Verdict::Accepted
        } else {
            Verdict::WrongAnswer
        }
    }))
}

pub struct Agents {
    pub retrieval: Arc<ScriptedBackend>,
    pub planning: Arc<ScriptedBackend>,
    pub coding: Arc<ScriptedBackend>,
    pub debugging: Arc<ScriptedBackend>,
}

impl Agents {
    pub fn new<A: Into<String>, B: Into<String>, C: Into<String>, D: Into<String>>(
        retrieval: impl IntoIterator<Item = A>,
        planning: impl IntoIterator<Item = B>,
        coding: impl IntoIterator<Item = C>,
        debugging: impl IntoIterator<Item = D>,
    ) -> Self {
        Agents {
            retrieval: Arc::new(ScriptedBackend::new("retrieval", retrieval)),
            planning: Arc::new(ScriptedBackend::new("planning", planning)),
            coding: Arc::new(ScriptedBackend::new("coding", coding)),
            debugging: Arc::new(ScriptedBackend::new("debugging", debugging)),
        }
    }

    pub fn bindings(&self) -> RoleBindings {
        let mut b = RoleBindings::new();
        let pairs: [(AgentRole, Arc<dyn Backend>); 4] = [
            (AgentRole::Retrieval, self.retrieval.clone()),
            (AgentRole::Planning, self.planning.clone()),
            (AgentRole::Coding, self.coding.clone()),
            (AgentRole::Debugging, self.debugging.clone()),
        ];
        for (role, backend) in pairs {
            b.insert(role, RoleBinding::new(backend, format!("{role}-model")));
        }
        b
    }

    pub fn pipeline(&self, k: usize, t: usize, r: usize) -> Pipeline {
        let cfg = PipelineConfig {
            plan_count: k,
            debug_rounds: t,
            format_retries: r,
            ..PipelineConfig::default()
        };
        Pipeline::new(cfg, self.bindings()).with_judge(marker_judge())
    }

    pub fn calls(&self) -> [usize; 4] {
        [
            self.retrieval.calls(),
            self.planning.calls(),
            self.coding.calls(),
            self.debugging.calls(),
        ]
    }
}
