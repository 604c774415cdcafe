use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mapforge::config::{AppConfig, GatewayMode};
use mapforge::corpus::import::{import_file, Adapter};
use mapforge::corpus::load_benchmark;
use mapforge::curator::{
    audit_feedback, distill_roles, select_supervision_candidates, supervise, verdict_map, CurationRecord,
    TrainingExample,
};
use mapforge::emitter::{corpus_file_name, verify_manifest, write_corpus, write_manifest, ManifestOverrides, Projection};
use mapforge::fsutil::{safe_stem, write_atomic};
use mapforge::metrics::{accuracy, format_count, render_report, ReportFormat};
use mapforge::orchestrator::{AbortReason, DEFAULT_TEMPLATES};
use mapforge::run_dir::{execute_run, RunDir, RunOptions};
use mapforge::sandbox::{Sandbox, Scope, Verdict};
use mapforge::AgentRole;
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "mapforge", version, about = "Multi-agent solver runs, judging and fine-tuning data curation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a benchmark dump into the canonical problem file.
    Import {
        /// Source layout: xcodeeval, apps or codecontests.
        adapter: Adapter,
        src: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Target language recorded on every problem.
        #[arg(long, default_value = "python")]
        language: String,
    },
    /// Run the four-agent pipeline over a benchmark.
    Run(RunArgs),
    /// Run live and capture every exchange into a cassette.
    Record {
        #[command(flatten)]
        run: RunArgs,
        /// Cassette file; defaults to the config's gateway.cassette.
        #[arg(long)]
        cassette: Option<PathBuf>,
    },
    /// Judge a directory of submissions named `<problem id>.<ext>`.
    Judge {
        benchmark: PathBuf,
        submissions: PathBuf,
        /// Optional config supplying toolchain overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        scope: ScopeArg,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Build fine-tuning corpora from finished runs.
    Curate {
        #[command(subcommand)]
        command: CurateCommand,
    },
    /// Write an adapter training manifest for one role's corpus.
    EmitManifest {
        #[arg(long)]
        role: AgentRole,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        base_model: Option<String>,
        #[arg(long)]
        rank: Option<u32>,
        /// Comma-separated subset of q,k,v,o.
        #[arg(long, value_delimiter = ',')]
        projections: Option<Vec<Projection>>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        grad_accum: Option<u32>,
        #[arg(long)]
        epochs: Option<u32>,
    },
    /// Check a manifest's corpus digest against the file on disk.
    VerifyManifest { manifest: PathBuf },
    /// Score a finished run directory.
    Report {
        run: PathBuf,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
    },
}

#[derive(Args)]
struct RunArgs {
    benchmark: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Problems in flight; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Completions in flight across all roles; defaults to --jobs.
    #[arg(long)]
    llm_jobs: Option<usize>,
}

#[derive(Subcommand)]
enum CurateCommand {
    /// Pass-filtered examples from strong (and mixed) runs.
    Distill {
        #[arg(long, value_delimiter = ',', default_value = "retrieval,debugging")]
        roles: Vec<AgentRole>,
        #[arg(long)]
        strong_run: PathBuf,
        /// Source of debugging examples; defaults to the strong run.
        #[arg(long)]
        mixed_run: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Supervisor-guided correction of small-model failures.
    Supervise {
        #[arg(long)]
        small_run: PathBuf,
        #[arg(long)]
        strong_run: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        llm_jobs: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Sample,
    Hidden,
    All,
}

impl From<ScopeArg> for Scope {
    fn from(s: ScopeArg) -> Scope {
        match s {
            ScopeArg::Sample => Scope::SampleOnly,
            ScopeArg::Hidden => Scope::HiddenOnly,
            ScopeArg::All => Scope::All,
        }
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Import { adapter, src, out, language } => {
            let m = import_file(adapter, &src, &out, &language)?;
            eprintln!("imported {} problems into {}", m.problems.len(), out.display());
            Ok(())
        }
        Command::Run(args) => run(&args, None),
        Command::Record { run: args, cassette } => run(&args, Some(cassette)),
        Command::Judge {
            benchmark,
            submissions,
            config,
            scope,
            jobs,
        } => judge(&benchmark, &submissions, config.as_deref(), scope.into(), jobs.unwrap_or_else(default_jobs)),
        Command::Curate { command } => match command {
            CurateCommand::Distill {
                roles,
                strong_run,
                mixed_run,
                out,
            } => distill(&roles, &strong_run, mixed_run.as_deref(), &out),
            CurateCommand::Supervise {
                small_run,
                strong_run,
                config,
                out,
                jobs,
                llm_jobs,
            } => {
                let jobs = jobs.unwrap_or_else(default_jobs);
                supervise_cmd(&small_run, &strong_run, &config, &out, jobs, llm_jobs.unwrap_or(jobs))
            }
        },
        Command::EmitManifest {
            role,
            corpus,
            out,
            base_model,
            rank,
            projections,
            lr,
            grad_accum,
            epochs,
        } => {
            let overrides = ManifestOverrides {
                base_model,
                adapter_rank: rank,
                target_projections: projections,
                learning_rate: lr,
                gradient_accumulation: grad_accum,
                epochs,
            };
            let m = write_manifest(role, &corpus, &overrides, &out)?;
            eprintln!("{}: {} examples, {}", out.display(), m.example_count, m.corpus_digest);
            Ok(())
        }
        Command::VerifyManifest { manifest } => {
            let v = verify_manifest(&manifest)?;
            if !v.ok() {
                bail!("corpus digest mismatch: manifest has {}, file has {}", v.expected, v.actual);
            }
            println!("ok {}", v.actual);
            Ok(())
        }
        Command::Report { run, format } => {
            let report = RunDir::open(&run)?.report()?;
            print!("{}", render_report(&report, format));
            Ok(())
        }
    }
}

/// `record` passes `Some(cassette override)`; plain `run` passes `None`.
fn run(args: &RunArgs, record: Option<Option<PathBuf>>) -> Result<()> {
    let mut cfg = AppConfig::load(&args.config)?;
    if let Some(cassette) = record {
        cfg.gateway.mode = GatewayMode::Record;
        if let Some(c) = cassette {
            cfg.gateway.cassette = Some(std::path::absolute(c)?);
        }
    }
    let bench = load_benchmark(&args.benchmark)?;
    let jobs = args.jobs.unwrap_or_else(default_jobs);
    let pipeline = cfg.pipeline(&AgentRole::PIPELINE, args.llm_jobs.unwrap_or(jobs))?;
    let prompts_text = match &cfg.prompts.file {
        Some(f) => {
            let path = cfg.resolve(f);
            std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?
        }
        None => DEFAULT_TEMPLATES.to_string(),
    };
    let opts = RunOptions {
        jobs,
        config_snapshot: cfg.snapshot(),
        gateway_mode: cfg.gateway.mode.as_str().to_string(),
        cassette: cfg.cassette_path().filter(|_| cfg.gateway.mode != GatewayMode::Live),
        prompts_text,
    };
    let dir = RunDir::create(&args.out)?;
    let trajs = execute_run(&pipeline, &bench, &dir, &opts)?;
    let report = dir.report()?;
    print!("{}", render_report(&report, ReportFormat::Table));
    let failed: Vec<String> = trajs
        .iter()
        .filter_map(|t| match &t.abort {
            Some(a) => match &a.reason {
                AbortReason::Backend(msg) => Some(format!("{} ({}): {msg}", t.problem_id, a.stage)),
                AbortReason::Format(_) => None,
            },
            None => None,
        })
        .collect();
    if !failed.is_empty() {
        for f in &failed {
            eprintln!("backend failure: {f}");
        }
        bail!("{} problem(s) aborted on backend errors; run directory {} is complete but degraded", failed.len(), args.out.display());
    }
    Ok(())
}

fn judge(benchmark: &Path, submissions: &Path, config: Option<&Path>, scope: Scope, jobs: usize) -> Result<()> {
    let bench = load_benchmark(benchmark)?;
    let sandbox = match config {
        Some(c) => AppConfig::load(c)?.sandbox(),
        None => Sandbox::default(),
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let rows: Vec<Result<(String, Option<Verdict>)>> = pool.install(|| {
        bench
            .problems
            .par_iter()
            .map(|p| {
                let tc = sandbox
                    .toolchains
                    .get(&p.language)
                    .with_context(|| format!("{}: no toolchain for language `{}`", p.id, p.language))?;
                let path = submissions.join(format!("{}.{}", safe_stem(&p.id), tc.file_ext));
                if !path.exists() {
                    return Ok((p.id.clone(), None));
                }
                let source = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                let report = sandbox.judge_problem(p, &source, scope, 64).with_context(|| p.id.clone())?;
                Ok((p.id.clone(), Some(report.overall)))
            })
            .collect()
    });
    let mut passed = 0;
    for row in rows {
        let (id, verdict) = row?;
        passed += u64::from(verdict == Some(Verdict::Accepted));
        match verdict {
            Some(v) => println!("{id}\t{v}"),
            None => println!("{id}\tMissing"),
        }
    }
    let total = bench.problems.len() as u64;
    println!("accuracy\t{:.2}\t{}/{}", accuracy(passed, total)?, format_count(passed), format_count(total));
    Ok(())
}

fn write_role_corpora(examples: Vec<TrainingExample>, roles: &[AgentRole], out: &Path) -> Result<()> {
    let mut by_role: BTreeMap<AgentRole, Vec<TrainingExample>> = roles.iter().map(|r| (*r, Vec::new())).collect();
    for ex in examples {
        by_role.entry(ex.role).or_default().push(ex);
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (role, examples) in by_role {
        let path = out.join(corpus_file_name(role));
        let n = write_corpus(&examples, role, &path)?;
        eprintln!("{role}: {n} examples -> {}", path.display());
    }
    Ok(())
}

fn distill(roles: &[AgentRole], strong: &Path, mixed: Option<&Path>, out: &Path) -> Result<()> {
    if let Some(r) = roles.iter().find(|r| **r == AgentRole::Supervisor) {
        bail!("--roles: `{r}` has no distillable stage");
    }
    let (_, _, strong_trajs) = RunDir::open(strong)?.load()?;
    let mixed_trajs = match mixed {
        Some(m) => RunDir::open(m)?.load()?.2,
        None => strong_trajs.clone(),
    };
    let mut examples = Vec::new();
    for role in roles {
        let source = if *role == AgentRole::Debugging { &mixed_trajs } else { &strong_trajs };
        let d = distill_roles(source, &[*role]);
        log_skips(&d.skipped);
        examples.extend(d.examples);
    }
    write_role_corpora(examples, roles, out)
}

fn log_skips(skipped: &[mapforge::curator::Skip]) {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in skipped {
        *counts.entry(format!("{} {:?}", s.role, s.reason)).or_default() += 1;
    }
    for (k, n) in counts {
        eprintln!("skipped {n}: {k}");
    }
}

fn supervise_cmd(small: &Path, strong: &Path, config: &Path, out: &Path, jobs: usize, llm_jobs: usize) -> Result<()> {
    let cfg = AppConfig::load(config)?;
    let (_, small_bench, small_trajs) = RunDir::open(small)?.load()?;
    let (_, _, strong_trajs) = RunDir::open(strong)?.load()?;
    let candidates = select_supervision_candidates(&verdict_map(&strong_trajs), &verdict_map(&small_trajs))?;
    eprintln!("{} supervision candidates", candidates.len());
    let pipeline = cfg.pipeline(&AgentRole::ALL, llm_jobs)?;
    let rounds = cfg.curation.max_supervision_rounds;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let records: Vec<Result<CurationRecord>> = pool.install(|| {
        candidates
            .par_iter()
            .map(|id| {
                let p = small_bench.get(id).with_context(|| format!("{id} missing from the small run"))?;
                let t = small_trajs.iter().find(|t| &t.problem_id == id).expect("verdict map covers trajectories");
                Ok(supervise(t, p, &pipeline, rounds)?)
            })
            .collect()
    });
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    let leaks = audit_feedback(&records);
    if !leaks.is_empty() {
        bail!("feedback audit failed for {leaks:?}");
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut log = String::new();
    for r in &records {
        log.push_str(&serde_json::to_string(r)?);
        log.push('\n');
    }
    let log_path = out.join("supervision.jsonl");
    write_atomic(&log_path, log.as_bytes()).with_context(|| format!("writing {}", log_path.display()))?;
    let examples: Vec<TrainingExample> = records.into_iter().flat_map(|r| r.examples).collect();
    write_role_corpora(examples, &[AgentRole::Retrieval, AgentRole::Planning, AgentRole::Coding], out)
}
