use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use agentmem::bench::actions::{run_action_bench, ActionReport, TemplateSet};
use agentmem::bench::profile::{run_profile_bench, Method};
use agentmem::bench::schedule::{closed_form_checks, run_scenario, summary_csv};
use agentmem::fixtures::{write_fixtures, Fixtures, DEFAULT_SEED, FIXTURES_ENV};
use agentmem::store::{load_session, MemoryDir};
use agentmem_core::action_memory::ReuseConfig;
use agentmem_core::agent_rr::{diff_session, run_and_learn, unbound_subtask, ReplayConfig};
use agentmem_core::embedding::HashEmbedder;
use agentmem_core::experience_memory::{fill_parameters, DEFAULT_MIN_SIMILARITY};
use agentmem_core::oracles::Oracles;
use agentmem_core::scheduler::ExecutionMode;
use agentmem_core::sim_env::catalog::TemplateStyle;
use agentmem_core::sim_env::workload::{action_workload, scenario_bundle};
use agentmem_core::sim_env::{GuiEnvironment, Mutation};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "agentmem", version, about = "Memory-augmented GUI agent benchmarks and tools")]
struct Cli {
    /// Fixture directory (defaults to the bundled set).
    #[arg(long, global = true, env = FIXTURES_ENV)]
    fixtures: Option<PathBuf>,
    /// Regenerate the workload and scenarios from this seed instead of
    /// reading the fixtures.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Serial,
    Coarse,
    Fine,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum SetArg {
    None,
    Llm,
    Human,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum What {
    Graph,
    Templates,
    Acttree,
    Actchain,
    Sessions,
}

#[derive(Subcommand)]
enum Cmd {
    /// Learn each user's profile graph and compare rewrites against a flat
    /// top-k baseline.
    BenchProfile {
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 400)]
        budget: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the action workload and report per-category reuse.
    BenchActions {
        #[arg(long, value_enum, default_value = "all")]
        set: SetArg,
        /// Base reuse threshold at the tree root.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = 1)]
        passes: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute the scenario bundle and lay it out under each mode.
    BenchSchedule {
        #[arg(long, value_enum, default_value = "all")]
        mode: ModeArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one task on one app against a memory directory and record it.
    Run {
        #[arg(long)]
        memory: PathBuf,
        #[arg(long)]
        app: String,
        #[arg(long)]
        task: String,
        /// Plan through the catalog's human-crafted templates when one matches.
        #[arg(long)]
        templates: bool,
        /// JSON file with one mutation or a list, applied to the app first.
        #[arg(long)]
        mutation: Option<PathBuf>,
    },
    /// Print the contents of a memory directory.
    Inspect {
        #[arg(long)]
        memory: PathBuf,
        #[arg(value_enum)]
        what: What,
    },
    /// Re-execute a recorded session and list fingerprint differences.
    ReplaySession {
        session: PathBuf,
        #[arg(long)]
        mutation: Option<PathBuf>,
    },
    /// Write the fixture files.
    GenFixtures {
        #[arg(long)]
        out: PathBuf,
    },
}

type CliResult = Result<bool, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Writes to stdout; a closed pipe is not an error.
fn stdout(text: &str) -> Result<(), std::io::Error> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => r,
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), std::io::Error> {
    match out {
        Some(p) => fs::write(p, text),
        None => stdout(text),
    }
}

fn read_mutations(p: &Path) -> Result<Vec<Mutation>, Box<dyn std::error::Error>> {
    let text = fs::read_to_string(p)?;
    match serde_json::from_str::<Vec<Mutation>>(&text) {
        Ok(v) => Ok(v),
        Err(_) => Ok(vec![serde_json::from_str::<Mutation>(&text)?]),
    }
}

fn run(cli: Cli) -> CliResult {
    let emb = HashEmbedder::default();
    if let Cmd::GenFixtures { out } = &cli.cmd {
        for p in write_fixtures(out, cli.seed.unwrap_or(DEFAULT_SEED))? {
            println!("{}", p.display());
        }
        return Ok(true);
    }
    let mut fx = Fixtures::resolve(cli.fixtures.as_deref())?;
    if let Some(seed) = cli.seed {
        fx.actions = action_workload(seed);
        fx.scenarios = scenario_bundle(seed);
    }
    match cli.cmd {
        Cmd::GenFixtures { .. } => unreachable!(),
        Cmd::BenchProfile { k, budget, out } => {
            let r = run_profile_bench(&fx.profile, k, budget, &emb)?;
            emit(out.as_deref(), &r.to_csv())?;
            for l in &r.learning {
                eprintln!(
                    "{}: {} batches, {} splits, {} updater calls, {} nodes, {} edges",
                    l.user, l.batches, l.splits, l.updater_calls, l.nodes, l.edges
                );
            }
            for m in [Method::Graph, Method::Flat, Method::NoProfile] {
                eprintln!("alignment {}: {:.3}", m.as_str(), r.alignment(m));
            }
            eprintln!("retrieval oracle calls: {}", r.retrieval_oracle_calls);
            Ok(r.retrieval_oracle_calls == 0)
        }
        Cmd::BenchActions {
            set,
            threshold,
            passes,
            out,
        } => {
            let sets: Vec<TemplateSet> = match set {
                SetArg::None => vec![TemplateSet::None],
                SetArg::Llm => vec![TemplateSet::LlmStyle],
                SetArg::Human => vec![TemplateSet::HumanCrafted],
                SetArg::All => TemplateSet::ALL.to_vec(),
            };
            let mut reuse = ReuseConfig::default();
            if let Some(t) = threshold {
                reuse.tau0 = t;
            }
            let mut csv = String::from(ActionReport::csv_header());
            let mut first_pass = Vec::new();
            for s in &sets {
                for r in run_action_bench(&fx.actions, *s, &fx.catalog, reuse, passes.max(1), &emb) {
                    csv.push_str(&r.csv_rows());
                    eprintln!("{} pass {}: average reuse {:.3}", s.as_str(), r.pass, r.average());
                    if r.pass == 1 {
                        first_pass.push(r.average());
                    }
                }
            }
            emit(out.as_deref(), &csv)?;
            // With every set run: human-crafted >= llm-style >= tree only.
            let ordered = first_pass.len() < 3 || (first_pass[2] >= first_pass[1] && first_pass[1] >= first_pass[0]);
            if !ordered {
                eprintln!("reuse ordering violated: {first_pass:?}");
            }
            Ok(ordered)
        }
        Cmd::BenchSchedule { mode, out } => {
            let modes: Vec<ExecutionMode> = match mode {
                ModeArg::Serial => vec![ExecutionMode::Serial],
                ModeArg::Coarse => vec![ExecutionMode::Coarse],
                ModeArg::Fine => vec![ExecutionMode::Fine],
                ModeArg::All => ExecutionMode::ALL.to_vec(),
            };
            let mut ok = true;
            let mut runs = Vec::new();
            for s in &fx.scenarios {
                let r = run_scenario(s, &fx.catalog, &modes, &emb)?;
                if !r.dominance_holds() {
                    eprintln!("{}: mode ordering violated {:?}", r.id, r.totals);
                    ok = false;
                }
                runs.push(r);
            }
            emit(out.as_deref(), &summary_csv(&runs, &modes))?;
            for c in closed_form_checks(&emb)? {
                eprintln!(
                    "{}: {} expected {:?} measured {:?}",
                    c.name,
                    if c.holds() { "ok" } else { "MISMATCH" },
                    c.expected,
                    c.measured
                );
                ok &= c.holds();
            }
            Ok(ok)
        }
        Cmd::Run {
            memory,
            app,
            task,
            templates,
            mutation,
        } => {
            let dir = MemoryDir::new(memory);
            let mut mem = dir.load(&emb)?;
            let mut envs = fx.catalog.environments();
            let env = envs.get_mut(&app).ok_or_else(|| format!("unknown app {app:?}"))?;
            if let Some(p) = mutation {
                for m in read_mutations(&p)? {
                    env.mutate(&m)?;
                }
            }
            let oracles = Oracles::default()
                .with_operator(Arc::new(fx.catalog.operator()))
                .with_rewriter(Arc::new(fx.catalog.rewriter()));
            if templates && mem.templates.is_empty() {
                for t in fx.catalog.templates(TemplateStyle::HumanCrafted) {
                    mem.templates.store(t, &emb)?;
                }
            }
            let id = format!("s{:04}", dir.sessions()?.len() + 1);
            let bound = templates
                .then(|| mem.templates.retrieve(&task, &emb, DEFAULT_MIN_SIMILARITY))
                .flatten()
                .and_then(|(t, _)| {
                    let plan = fill_parameters(t, &task, "", &mem.templates, &oracles).ok()?;
                    let mut st = plan.subtasks.into_iter().next()?;
                    st.id = id.clone();
                    Some((st, t.clone()))
                });
            let (subtask, template) = match bound {
                Some((st, t)) => (st, Some(t)),
                None => (unbound_subtask(&id, &app, &task), None),
            };
            let (report, merge) = run_and_learn(
                &subtask,
                &mut mem.actions,
                template.as_ref(),
                &oracles,
                &emb,
                &ReplayConfig::default(),
                env,
            );
            dir.save(&mem)?;
            let path = dir.save_session(&report.record)?;
            println!(
                "{} {:?}: {} steps, reuse {:.3}, {} operator calls, {} stale, {} flagged",
                report.record.id,
                report.outcome(),
                report.record.steps.len(),
                report.reuse_rate(),
                report.operator_calls,
                report.stale.len(),
                merge.flagged()
            );
            println!("session: {}", path.display());
            Ok(report.error.is_none())
        }
        Cmd::Inspect { memory, what } => {
            let dir = MemoryDir::new(memory);
            let text = match what {
                What::Graph => {
                    let g = dir.load_graph(&emb)?;
                    serde_json::to_string_pretty(&serde_json::json!({
                        "nodes": g.views(),
                        "edges": g.edges().collect::<Vec<_>>(),
                    }))?
                }
                What::Templates => {
                    let s = dir.load_templates(&emb)?;
                    serde_json::to_string_pretty(&s.iter().collect::<Vec<_>>())?
                }
                What::Acttree => {
                    let m = dir.load_actions()?;
                    let shapes: Vec<_> = m.trees.values().map(|t| (&t.app_id, t.shape())).collect();
                    serde_json::to_string_pretty(&shapes)?
                }
                What::Actchain => serde_json::to_string_pretty(&dir.load_actions()?.chains)?,
                What::Sessions => {
                    let mut lines = String::new();
                    for p in dir.sessions()? {
                        let r = load_session(&p)?;
                        lines.push_str(&format!(
                            "{} {} {:?} steps={} task={:?}\n",
                            r.id,
                            r.app_id,
                            r.outcome,
                            r.steps.len(),
                            r.task_text
                        ));
                    }
                    lines
                }
            };
            stdout(&format!("{}\n", text.trim_end()))?;
            Ok(true)
        }
        Cmd::ReplaySession { session, mutation } => {
            let record = load_session(&session)?;
            let mut envs = fx.catalog.environments();
            let env = envs
                .get_mut(&record.app_id)
                .ok_or_else(|| format!("unknown app {:?}", record.app_id))?;
            if let Some(p) = mutation {
                for m in read_mutations(&p)? {
                    env.mutate(&m)?;
                }
            }
            let diffs = diff_session(&record, env as &mut dyn GuiEnvironment);
            for d in &diffs {
                println!("step {}: expected {} found {} ({})", d.step_no, d.expected, d.found, d.note);
            }
            println!("{} of {} steps differ", diffs.len(), record.steps.len());
            Ok(diffs.is_empty())
        }
    }
}
