//! Acceptance suite: one pass/fail line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so the lines are always shown.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{code, marker_judge, plans_xml, problem, retrieval_xml};
use mapforge::agent_xml::{
    lenient_recover, parse_for_role, parse_retrieval, BlameReport, BlamedRole, FailureKind, ParsedResponse, Plan,
    PlanSet, RETRIEVAL,
};
use mapforge::corpus::{BenchmarkManifest, TestCase};
use mapforge::curator::{
    audit_feedback, distill_retrieval, select_supervision_candidates, supervise, CurationRecord, Provenance,
    TrainingExample,
};
use mapforge::emitter::{verify_manifest, write_corpus, write_manifest, ManifestOverrides, Projection};
use mapforge::gateway::{
    ledger_add, read_cassette, Backend, CassetteEntry, CassetteWriter, ChatMessage, ChatRequest, ChatResponse,
    CostLedger, FnBackend, RecordingBackend, ReplayBackend, Usage,
};
use mapforge::metrics::{accuracy, render_report, score_run, ReportFormat, RunReport, REPORT_VERSION};
use mapforge::orchestrator::{order_plans, should_debug, Pipeline, PipelineConfig, RoleBinding, RoleBindings};
use mapforge::run_dir::{execute_run, RunDir, RunOptions};
use mapforge::sandbox::{ExecutionLimits, JudgeCase, Sandbox, Scope, TestScope, Verdict};
use mapforge::AgentRole;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use serde_json::Value;

const METRIC_RUNTIME_LIMIT: Duration = Duration::from_secs(1);
const MALFORMED_CASES: usize = 200;
const RANDOM_RUNS: u32 = 1_000;
const PLAN_SETS: u32 = 10_000;
const CURATION_PROBLEMS: usize = 50;
const TLE_LIMIT_S: f64 = 2.0;
const TLE_WINDOW_MS: (u64, u64) = (2_000, 2_500);
const CONCURRENT_JUDGINGS: usize = 100;
const REPLAY_PROBLEMS: usize = 20;
const CASSETTE_ENTRIES: usize = 3_095;

type Outcome = Result<(), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn id(i: usize) -> String {
    format!("p{i:03}")
}

/// Problem id quoted in the first line of every prompt's statement.
fn problem_of(req: &ChatRequest) -> usize {
    let text = &req.messages.iter().find(|m| m.content.contains("Problem p")).expect("statement").content;
    let start = text.find("Problem p").unwrap() + "Problem p".len();
    text[start..start + 3].parse().unwrap()
}

/// Per-problem behaviour of the scripted agents.
#[derive(Clone, Copy, PartialEq)]
enum Script {
    Direct,
    Debugged,
    Fails,
    RecoveredRetrieval,
    RetrievalAbort,
}

const RECOVERABLE: &str =
    "<root>\n<algorithm>Sliding Window\n<description>two pointers</description>\n</algorithm>\n<tutorial>Move both ends.</tutorial>\n";

fn scripted_backends(script: fn(usize) -> Script) -> [(AgentRole, Arc<dyn Backend>); 4] {
    let retrieval = FnBackend::new("retrieval", move |r: &ChatRequest| match script(problem_of(r)) {
        Script::RecoveredRetrieval => RECOVERABLE.to_string(),
        Script::RetrievalAbort => "It is probably greedy.".to_string(),
        _ => retrieval_xml(&format!("Technique {}", problem_of(r))),
    });
    let planning = FnBackend::new("planning", |r: &ChatRequest| {
        let i = problem_of(r);
        plans_xml(&[("first idea", (i % 90) as u8), ("second idea", 50), ("third idea", 95)])
    });
    let coding = FnBackend::new("coding", move |r: &ChatRequest| match script(problem_of(r)) {
        Script::Direct | Script::RecoveredRetrieval => code("print('PASS_ALL')"),
        _ => code(&format!("print('wrong {}')", problem_of(r))),
    });
    let debugging = FnBackend::new("debugging", move |r: &ChatRequest| match script(problem_of(r)) {
        Script::Debugged => code("print('PASS_ALL')"),
        _ => code("print('still wrong')"),
    });
    [
        (AgentRole::Retrieval, Arc::new(retrieval)),
        (AgentRole::Planning, Arc::new(planning)),
        (AgentRole::Coding, Arc::new(coding)),
        (AgentRole::Debugging, Arc::new(debugging)),
    ]
}

fn bindings(backends: impl IntoIterator<Item = (AgentRole, Arc<dyn Backend>)>) -> RoleBindings {
    let mut b = RoleBindings::new();
    for (role, backend) in backends {
        b.insert(role, RoleBinding::new(backend, format!("{role}-model")));
    }
    b
}

fn config(k: usize, t: usize, r: usize) -> PipelineConfig {
    PipelineConfig {
        plan_count: k,
        debug_rounds: t,
        format_retries: r,
        ..PipelineConfig::default()
    }
}

fn benchmark(name: &str, n: usize) -> BenchmarkManifest {
    BenchmarkManifest::new(name, (0..n).map(|i| problem(&id(i))).collect())
}

fn criterion_1() -> Outcome {
    let clock = Instant::now();
    let a = accuracy(14, 106).map_err(|e| e.to_string())?;
    let b = accuracy(20, 106).map_err(|e| e.to_string())?;
    check(a == 13.21 && b == 18.87, || format!("accuracy(14,106)={a}, accuracy(20,106)={b}"))?;

    let script = |i: usize| match i {
        0..24 => Script::Direct,
        24..30 => Script::Debugged,
        _ => Script::Fails,
    };
    let pipeline = Pipeline::new(config(3, 5, 2), bindings(scripted_backends(script))).with_judge(marker_judge());
    let bench = benchmark("synthetic-106", 106);
    let trajs: Vec<_> = bench.problems.iter().map(|p| pipeline.run_problem(p).unwrap()).collect();
    let r = score_run(&trajs, &bench).map_err(|e| e.to_string())?;
    let elapsed = clock.elapsed();
    check(
        r.pass_count == 30 && r.accuracy_pct == 28.30 && r.pass_without_debug == 24 && r.pass_with_debug == 6,
        || format!("pass_count {} accuracy {} split {}/{}", r.pass_count, r.accuracy_pct, r.pass_without_debug, r.pass_with_debug),
    )?;
    check(elapsed < METRIC_RUNTIME_LIMIT, || format!("took {elapsed:?}"))
}

fn kinds(raw: &str, role: AgentRole) -> BTreeSet<FailureKind> {
    match parse_for_role(role, raw, "python") {
        Ok(_) => BTreeSet::new(),
        Err(f) => f.into_iter().map(|f| f.kind).collect(),
    }
}

/// One valid document with exactly one seeded violation of `kind`.
fn malformed(kind: FailureKind, rng: &mut impl RngExt) -> (String, AgentRole) {
    let word = |rng: &mut dyn FnMut(u32) -> u32| -> String {
        let words = ["greedy", "dp", "graph", "prefix sums", "binary search", "two pointers", "hashing", "sorting"];
        words[rng(words.len() as u32) as usize].to_string()
    };
    let mut pick = |n: u32| rng.random_range(0..n);
    let name = word(&mut pick);
    let tutorial = format!("Use {} then {}.", word(&mut pick), word(&mut pick));
    let conf = pick(101);
    let plans = 1 + pick(3) as usize;
    let plan_xml = |c: &str| format!("<plan><steps>{name} step</steps><confidence>{c}</confidence></plan>");
    let body = (0..plans).map(|_| plan_xml(&conf.to_string())).collect::<String>();
    match kind {
        FailureKind::MissingTag => match pick(2) {
            0 => (format!("<root><algorithm>{name}</algorithm></root>"), AgentRole::Retrieval),
            _ => (format!("<root><tutorial>{tutorial}</tutorial></root>"), AgentRole::Retrieval),
        },
        FailureKind::UnclosedTag => (
            format!("<root><algorithm>{name}</algorithm><tutorial>{tutorial}</tutorial>"),
            AgentRole::Retrieval,
        ),
        FailureKind::UnexpectedTag => match pick(2) {
            0 => (
                format!("<root><algorithm>{name}</algorithm><hint>{name}</hint><tutorial>{tutorial}</tutorial></root>"),
                AgentRole::Retrieval,
            ),
            _ => (format!("<root>{body}<note>{name}</note></root>"), AgentRole::Planning),
        },
        FailureKind::BadConfidence => {
            let bad = ["high", "101", "-3", "9000", "seventy", "50%"][pick(6) as usize];
            (format!("<root>{body}{}</root>", plan_xml(bad)), AgentRole::Planning)
        }
        FailureKind::NotWellFormed => match pick(2) {
            0 => (
                format!("<root><algorithm>{name}</algorithm></tutorial><tutorial>{tutorial}</tutorial></root>"),
                AgentRole::Retrieval,
            ),
            _ => (format!("I would use {name} here."), AgentRole::Retrieval),
        },
        FailureKind::NoCodeBlock => (format!("print('{name}')"), [AgentRole::Coding, AgentRole::Debugging][pick(2) as usize]),
    }
}

fn criterion_2() -> Outcome {
    let fixture = "<root>\n<algorithm>Sliding Window\n<description>two pointers</description>\n</algorithm>\n<tutorial>Move both ends.</tutorial>\n";
    let got = kinds(fixture, AgentRole::Retrieval);
    let want = BTreeSet::from([FailureKind::UnexpectedTag, FailureKind::UnclosedTag]);
    check(got == want, || format!("fixture classified as {got:?}"))?;
    match lenient_recover(fixture, &RETRIEVAL) {
        Some(ParsedResponse::Retrieval(r)) if !r.algorithm_name.is_empty() && !r.tutorial.is_empty() => {}
        other => return Err(format!("recovery gave {other:?}")),
    }
    check(parse_retrieval(fixture).is_err(), || "fixture parsed strictly".into())?;

    let mut runner = TestRunner::deterministic();
    let mut misses = Vec::new();
    for i in 0..MALFORMED_CASES {
        let kind = FailureKind::ALL[i % FailureKind::ALL.len()];
        let (raw, role) = malformed(kind, runner.rng());
        let got = kinds(&raw, role);
        if got != BTreeSet::from([kind]) {
            misses.push(format!("{kind:?} -> {got:?}: {raw}"));
        }
    }
    check(misses.is_empty(), || format!("{}/{MALFORMED_CASES} misclassified, first: {}", misses.len(), misses[0]))
}

fn criterion_3() -> Outcome {
    let agents = common::Agents::new(
        [retrieval_xml("A")],
        [plans_xml(&[("a", 30), ("b", 60), ("c", 90)])],
        [code("print('no')")],
        [code("print('no again')")],
    );
    agents.pipeline(3, 2, 2).run_problem(&problem("p000")).unwrap();
    check(agents.calls() == [1, 1, 3, 6], || format!("call log {:?}", agents.calls()))?;

    for u in 0..10 {
        for t in 0..10 {
            check(!should_debug(Verdict::Accepted, u, t), || format!("should_debug(Accepted, {u}, {t})"))?;
        }
    }

    let outcome = prop_oneof![Just("FAIL"), Just("PASS_SAMPLE"), Just("PASS_ALL")];
    let strategy = (
        1usize..=4,
        0usize..=3,
        prop::collection::vec(outcome.clone(), 4),
        prop::collection::vec(outcome, 12),
    );
    let mut runner = TestRunner::new(Config {
        cases: RANDOM_RUNS,
        failure_persistence: None,
        rng_algorithm: proptest::test_runner::RngAlgorithm::ChaCha,
        ..Config::default()
    });
    runner
        .run(&strategy, |(k, t, coding, debugging)| {
            let agents = common::Agents::new(
                [retrieval_xml("A")],
                [plans_xml(&[("a", 10), ("b", 20), ("c", 30), ("d", 40)])],
                coding.iter().enumerate().map(|(i, m)| code(&format!("print('{m} {i}')"))).collect::<Vec<_>>(),
                debugging.iter().enumerate().map(|(i, m)| code(&format!("print('{m} d{i}')"))).collect::<Vec<_>>(),
            );
            let traj = agents.pipeline(k, t, 0).run_problem(&problem("p000")).unwrap();
            for w in traj.stages.windows(2) {
                let gated = w[0].judgement.as_ref().is_some_and(|j| j.verdict == Verdict::Accepted);
                prop_assert!(!(gated && w[1].role == AgentRole::Debugging));
            }
            prop_assert!(traj.debug_iterations_used <= traj.plans_tried * t);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn criterion_4() -> Outcome {
    let plan = (0u8..=100, 0u32..1000).prop_map(|(c, n)| Plan {
        steps: format!("plan {n}"),
        confidence: c,
    });
    let strategy = prop::collection::vec(plan, 0..12).prop_map(|plans| PlanSet { plans });
    let mut runner = TestRunner::new(Config {
        cases: PLAN_SETS,
        failure_persistence: None,
        rng_algorithm: proptest::test_runner::RngAlgorithm::ChaCha,
        ..Config::default()
    });
    runner
        .run(&strategy, |ps| {
            let ordered = order_plans(&ps);
            prop_assert_eq!(ordered.len(), ps.plans.len());
            for w in ordered.windows(2) {
                prop_assert!(w[0].confidence >= w[1].confidence);
            }
            // Stability: equal-confidence plans keep their generation order.
            let mut tagged: Vec<(u8, usize)> = ps.plans.iter().enumerate().map(|(i, p)| (p.confidence, i)).collect();
            tagged.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            let expected: Vec<&Plan> = tagged.iter().map(|(_, i)| &ps.plans[*i]).collect();
            prop_assert_eq!(ordered.iter().collect::<Vec<_>>(), expected);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn curation_script(i: usize) -> Script {
    match i % 5 {
        0 => Script::Direct,
        1 => Script::Debugged,
        2 => Script::Fails,
        3 => Script::RecoveredRetrieval,
        _ => Script::RetrievalAbort,
    }
}

/// Ids with an accepted final program and a clean retrieval stage, read
/// straight from the trajectory files.
fn oracle_scan(dir: &Path) -> Result<BTreeSet<String>, String> {
    let mut out = BTreeSet::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let text = std::fs::read_to_string(entry.map_err(|e| e.to_string())?.path()).map_err(|e| e.to_string())?;
        let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        let summary = lines.iter().find(|v| v["record"] == "trajectory").ok_or("no summary line")?;
        let passed = summary["hidden_verdict"] == "Accepted" && summary["final_source"].is_string();
        let clean = lines
            .iter()
            .rev()
            .find(|v| v["record"] == "stage" && v["role"] == "retrieval")
            .is_some_and(|s| s["recovered"] == false && !s["parsed"].is_null());
        if passed && clean {
            out.insert(summary["problem_id"].as_str().unwrap().to_string());
        }
    }
    Ok(out)
}

fn criterion_5() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bench = benchmark("curation-50", CURATION_PROBLEMS);
    let pipeline =
        Pipeline::new(config(3, 2, 1), bindings(scripted_backends(curation_script))).with_judge(marker_judge());
    let dir = RunDir::create(&tmp.path().join("run")).map_err(|e| e.to_string())?;
    let opts = RunOptions {
        jobs: 4,
        ..RunOptions::default()
    };
    execute_run(&pipeline, &bench, &dir, &opts).map_err(|e| e.to_string())?;

    let trajs = RunDir::open(dir.root()).and_then(|d| d.read_trajectories()).map_err(|e| e.to_string())?;
    let distilled = distill_retrieval(&trajs);
    let got: BTreeSet<String> = distilled.examples.iter().map(|e| e.problem_id.clone()).collect();
    let oracle = oracle_scan(&dir.root().join("trajectories"))?;
    let known: BTreeSet<String> = (0..CURATION_PROBLEMS)
        .filter(|i| matches!(curation_script(*i), Script::Direct | Script::Debugged))
        .map(id)
        .collect();
    check(got == oracle, || format!("distilled {got:?} != oracle {oracle:?}"))?;
    check(oracle == known, || format!("oracle {oracle:?} != known outcomes {known:?}"))?;
    check(distilled.examples.len() == got.len(), || "duplicate examples".into())?;

    let judge = marker_judge();
    for ex in &distilled.examples {
        let t = trajs.iter().find(|t| t.problem_id == ex.problem_id).unwrap();
        let p = bench.get(&ex.problem_id).unwrap();
        let rejudged = judge.judge(p, t.final_source.as_deref().unwrap(), Scope::All, 64).map_err(|e| e.to_string())?;
        check(t.hidden_verdict == Some(Verdict::Accepted) && rejudged.verdict == Verdict::Accepted, || {
            format!("{} re-judged {}", ex.problem_id, rejudged.verdict)
        })?;
    }
    Ok(())
}

fn criterion_6() -> Outcome {
    let upstream = [AgentRole::Retrieval, AgentRole::Planning, AgentRole::Coding];
    let mut records: Vec<CurationRecord> = Vec::new();
    for (n, blamed) in [BlamedRole::Retrieval, BlamedRole::Planning, BlamedRole::Coding].into_iter().enumerate() {
        let feedback = format!("Agent {n} must handle the empty input case first");
        let agents = common::Agents::new(
            [retrieval_xml("A"), retrieval_xml("B")],
            [plans_xml(&[("a", 50)]), plans_xml(&[("b", 60)])],
            [code("print('no')"), code("print('PASS_ALL')")],
            [code("print('no')")],
        );
        let p = problem(&id(n));
        let failed = agents.pipeline(1, 0, 1).run_problem(&p).unwrap();
        let before = agents.calls();
        let sup = Arc::new(mapforge::gateway::ScriptedBackend::new(
            "sup",
            [BlameReport {
                blamed_role: blamed,
                feedback: feedback.clone(),
            }
            .to_xml()],
        ));
        let mut pipeline = agents.pipeline(1, 0, 1);
        pipeline.roles.insert(AgentRole::Supervisor, RoleBinding::new(sup, "supervisor-model"));
        let rec = supervise(&failed, &p, &pipeline, 3).map_err(|e| e.to_string())?;
        for round in &rec.rounds {
            let regen = round.trajectory.as_ref().ok_or("round without regeneration")?;
            let role = blamed.agent_role();
            let regenerated: Vec<AgentRole> =
                upstream.iter().copied().filter(|r| regen.stages_for(*r).next().is_some()).collect();
            let first = regen.stages.first().map(|s| s.role);
            check(first == Some(role), || format!("{role}: first regenerated stage {first:?}"))?;
            let earlier: Vec<AgentRole> = upstream.iter().copied().take_while(|r| *r != role).collect();
            check(regenerated.iter().all(|r| !earlier.contains(r)), || {
                format!("{role}: upstream stages {regenerated:?} re-ran")
            })?;
            check(regen.stages_for(role).count() == 1 || role == AgentRole::Coding, || {
                format!("{role}: regenerated more than once in one round")
            })?;
        }
        let after = agents.calls();
        let idx = upstream.iter().position(|r| *r == blamed.agent_role()).unwrap();
        check(after[..idx] == before[..idx], || format!("upstream calls changed {before:?} -> {after:?}"))?;
        records.push(rec);
    }

    check(audit_feedback(&records).is_empty(), || "audit found leaked feedback".into())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut hits = 0;
    for role in [AgentRole::Retrieval, AgentRole::Planning, AgentRole::Coding] {
        let examples: Vec<TrainingExample> =
            records.iter().flat_map(|r| r.examples.clone()).filter(|e| e.role == role).collect();
        let path = tmp.path().join(format!("{role}.jsonl"));
        write_corpus(&examples, role, &path).map_err(|e| e.to_string())?;
        let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        for r in &records {
            for fb in r.rounds.iter().filter_map(|x| x.feedback.as_deref()) {
                for line in text.lines() {
                    let v: Value = serde_json::from_str(line).unwrap();
                    hits += usize::from(v["input"].to_string().contains(fb));
                }
            }
        }
    }
    check(hits == 0, || format!("{hits} corpus lines contain feedback text"))?;
    let examples: usize = records.iter().map(|r| r.examples.len()).sum();
    check(examples == 3, || format!("expected one corrected example per blame, got {examples}"))?;

    let mut runner = TestRunner::deterministic();
    let mut strong = BTreeMap::new();
    let mut small = BTreeMap::new();
    let verdicts = [None, Some(Verdict::Accepted), Some(Verdict::WrongAnswer), Some(Verdict::TimeLimit)];
    for i in 0..200 {
        strong.insert(id(i), verdicts[runner.rng().random_range(0..4)]);
        small.insert(id(i), verdicts[runner.rng().random_range(0..4)]);
    }
    let got: BTreeSet<String> = select_supervision_candidates(&strong, &small).map_err(|e| e.to_string())?.into_iter().collect();
    let want: BTreeSet<String> = strong
        .keys()
        .filter(|k| strong[*k] == Some(Verdict::Accepted) && small[*k] != Some(Verdict::Accepted))
        .cloned()
        .collect();
    check(got == want, || "candidate set differs from strong-pass and small-fail".into())
}

fn criterion_7() -> Outcome {
    let sandbox = Sandbox::default();
    let cases = |input: &str, expected: &str| {
        vec![JudgeCase {
            scope: TestScope::Sample,
            case: TestCase::new(input, expected),
        }]
    };
    let echo = "import sys\nsys.stdout.write(sys.stdin.read())\n";
    let limits = ExecutionLimits::default();
    let run = |src: &str, tests: &[JudgeCase], limits: &ExecutionLimits| {
        sandbox.run_tests(src, "python", tests, limits).map_err(|e| e.to_string())
    };
    let ok = run(echo, &cases("hello 42\n", "hello 42\n"), &limits)?;
    check(ok.overall == Verdict::Accepted, || format!("echo gave {}", ok.overall))?;
    let wrong = run("print('nope')\n", &cases("1\n", "2\n"), &limits)?;
    check(wrong.overall == Verdict::WrongAnswer, || format!("wrong output gave {}", wrong.overall))?;

    let tle_limits = ExecutionLimits {
        time_limit_s: TLE_LIMIT_S,
        ..ExecutionLimits::default()
    };
    let tle = run("while True:\n    pass\n", &cases("", ""), &tle_limits)?;
    let elapsed = tle.per_test[0].elapsed_ms;
    check(tle.overall == Verdict::TimeLimit, || format!("loop gave {}", tle.overall))?;
    check((TLE_WINDOW_MS.0..=TLE_WINDOW_MS.1).contains(&elapsed), || format!("loop elapsed {elapsed} ms"))?;

    let tests = cases("concurrent\n", "concurrent\n");
    let verdicts: Vec<Result<Verdict, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..CONCURRENT_JUDGINGS)
            .map(|_| s.spawn(|| run(echo, &tests, &limits).map(|r| r.overall)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let distinct: BTreeSet<String> = verdicts.iter().map(|v| format!("{v:?}")).collect();
    check(distinct.len() == 1 && verdicts[0] == Ok(Verdict::Accepted), || {
        format!("concurrent verdicts {distinct:?}")
    })
}

fn replay_script(i: usize) -> Script {
    [Script::Direct, Script::Debugged, Script::Fails, Script::RecoveredRetrieval][i % 4]
}

fn run_into(pipeline: &Pipeline, bench: &BenchmarkManifest, root: &Path, cassette: &Path) -> Result<(Vec<u8>, String), String> {
    let dir = RunDir::create(root).map_err(|e| e.to_string())?;
    let opts = RunOptions {
        jobs: 4,
        config_snapshot: "mode = \"replay\"\n".into(),
        gateway_mode: "replay".into(),
        cassette: Some(cassette.to_path_buf()),
        prompts_text: String::new(),
    };
    let trajs = execute_run(pipeline, bench, &dir, &opts).map_err(|e| e.to_string())?;
    for t in &trajs {
        let mut sum = CostLedger::default();
        for s in &t.stages {
            sum.input_tokens += s.usage.prompt_tokens;
            sum.output_tokens += s.usage.completion_tokens;
            sum.calls += u64::from(s.attempt);
            sum.wall_time_ms += s.latency_ms;
        }
        check(t.ledger == sum, || format!("{}: ledger {:?} != stage sum {sum:?}", t.problem_id, t.ledger))?;
    }
    let mut files = Vec::new();
    for p in &bench.problems {
        files.extend(std::fs::read(dir.trajectory_path(&p.id)).map_err(|e| e.to_string())?);
    }
    let report = dir.report().map_err(|e| e.to_string())?;
    let total: CostLedger = trajs.iter().map(|t| &t.ledger).sum();
    check(report.ledger == total, || "report ledger differs from trajectory sum".into())?;
    let rendered = render_report(&report, ReportFormat::Json) + &render_report(&report, ReportFormat::Table);
    Ok((files, rendered))
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cassette = tmp.path().join("cassette.jsonl");
    let bench = benchmark("replay-20", REPLAY_PROBLEMS);
    let writer = Arc::new(CassetteWriter::open(&cassette).map_err(|e| e.to_string())?);
    let recording = scripted_backends(replay_script).map(|(role, b)| {
        let rec: Arc<dyn Backend> = Arc::new(RecordingBackend::shared(b, writer.clone()));
        (role, rec)
    });
    let live = Pipeline::new(config(3, 2, 1), bindings(recording)).with_judge(marker_judge());
    for p in &bench.problems {
        live.run_problem(p).map_err(|e| e.to_string())?;
    }

    let replay: Arc<dyn Backend> = Arc::new(ReplayBackend::open(&cassette).map_err(|e| e.to_string())?);
    let replayed = || {
        Pipeline::new(config(3, 2, 1), bindings(AgentRole::PIPELINE.map(|r| (r, replay.clone()))))
            .with_judge(marker_judge())
    };
    let a = run_into(&replayed(), &bench, &tmp.path().join("a"), &cassette)?;
    let b = run_into(&replayed(), &bench, &tmp.path().join("b"), &cassette)?;
    check(a.0 == b.0, || "trajectory files differ between replays".into())?;
    check(a.1 == b.1, || "reports differ between replays".into())?;
    let a_dir = RunDir::open(&tmp.path().join("a")).map_err(|e| e.to_string())?;
    check(a_dir.read_trajectories().map_err(|e| e.to_string())?.iter().all(|t| t.abort.is_none()), || {
        "replay missed a cassette entry".into()
    })?;

    let synthetic = tmp.path().join("synthetic.jsonl");
    let writer = CassetteWriter::open(&synthetic).map_err(|e| e.to_string())?;
    for i in 0..CASSETTE_ENTRIES {
        let req = ChatRequest {
            model: "coding-model".into(),
            messages: vec![ChatMessage::user(format!("request {i}"))],
            temperature: 0.0,
            max_tokens: 2048,
            stop: None,
        };
        let resp = ChatResponse {
            content: format!("response {i}"),
            usage: Usage {
                prompt_tokens: 1_000 + i as u64,
                completion_tokens: 300,
            },
            latency_ms: 20,
            backend_id: "recorded".into(),
        };
        writer.append(&CassetteEntry::new(req, resp)).map_err(|e| e.to_string())?;
    }
    let entries = read_cassette(&synthetic).map_err(|e| e.to_string())?;
    let backend = ReplayBackend::from_entries("synthetic", entries.clone());
    let mut ledger = CostLedger::default();
    for e in &entries {
        ledger = ledger_add(ledger, &backend.complete(&e.request).map_err(|e| e.to_string())?);
    }
    let report = RunReport {
        report_version: REPORT_VERSION,
        benchmark: "synthetic".into(),
        total_problems: 0,
        pass_count: 0,
        accuracy_pct: 0.0,
        pass_without_debug: 0,
        pass_with_debug: 0,
        format_fail_events: 0,
        format_fail_problems: 0,
        aborted_problems: 0,
        ledger,
        config_snapshot: String::new(),
    };
    let table = render_report(&report, ReportFormat::Table);
    let calls = table.lines().find(|l| l.starts_with("API Calls")).unwrap_or_default();
    check(ledger.calls == CASSETTE_ENTRIES as u64 && calls.trim_end().ends_with(" 3,095"), || {
        format!("calls {} rendered `{calls}`", ledger.calls)
    })
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = tmp.path().join("retrieval.jsonl");
    let examples: Vec<TrainingExample> = (0..5)
        .map(|i| TrainingExample {
            role: AgentRole::Retrieval,
            input: vec![ChatMessage::user(format!("problem {i}"))],
            output: retrieval_xml("Greedy"),
            provenance: Provenance::Distilled,
            problem_id: id(i),
            source_model: "strong".into(),
        })
        .collect();
    write_corpus(&examples, AgentRole::Retrieval, &corpus).map_err(|e| e.to_string())?;
    let out = tmp.path().join("retrieval.manifest.json");
    let m = write_manifest(AgentRole::Retrieval, &corpus, &ManifestOverrides::default(), &out).map_err(|e| e.to_string())?;
    check(
        m.adapter_rank == 32
            && m.target_projections == Projection::ALL
            && m.learning_rate == 2e-5
            && m.gradient_accumulation == 16
            && m.epochs == 3
            && m.example_count == 5,
        || format!("manifest {m:?}"),
    )?;
    let v = verify_manifest(&out).map_err(|e| e.to_string())?;
    check(v.ok(), || "fresh manifest fails verification".into())?;

    let mut bytes = std::fs::read(&corpus).map_err(|e| e.to_string())?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    std::fs::write(&corpus, bytes).map_err(|e| e.to_string())?;
    let v = verify_manifest(&out).map_err(|e| e.to_string())?;
    check(!v.ok(), || "1-byte mutation went undetected".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("metric arithmetic", criterion_1),
        ("format-failure taxonomy", criterion_2),
        ("pipeline state machine", criterion_3),
        ("plan ordering", criterion_4),
        ("curation soundness", criterion_5),
        ("supervisor protocol", criterion_6),
        ("sandbox", criterion_7),
        ("determinism and ledger", criterion_8),
        ("manifest fidelity", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let clock = Instant::now();
        match f() {
            Ok(()) => println!("criterion {}: PASS  {name} ({:.2?})", i + 1, clock.elapsed()),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
