use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use subst_core::commerce::{self, CommerceParams, Mutant, SCENARIOS};
use subst_core::kernel::format::{
    expr_from_json, machine_to_json, parse_machine_file, SubstitutionSection,
};
use subst_core::kernel::{violated_invariant, Machine};
use subst_core::obligations::{ObligationError, DEFAULT_STATE_CAP};
use subst_core::substitution::{
    run_scenario, Driver, Policy, SubstitutionConfig, SubstitutionError, Trigger,
};
use subst_core::Scenario;

#[derive(Parser)]
#[command(
    name = "subst",
    version,
    about = "Check and simulate system substitution models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in scenarios and mutants.
    List,
    /// Run every obligation for a scenario or machine file.
    Check(CheckArgs),
    /// Run a seeded scenario, optionally with one substitution, and write its trace.
    Simulate(SimulateArgs),
    /// Write a built-in machine as a machine file.
    Export(ExportArgs),
    /// Parse and validate a machine file, optionally re-emitting it canonically.
    Import(ImportArgs),
}

#[derive(Args, Clone)]
struct Source {
    /// Built-in scenario name.
    #[arg(long, conflicts_with = "machine", required_unless_present = "machine")]
    scenario: Option<String>,
    /// Machine definition file.
    #[arg(long)]
    machine: Option<PathBuf>,
    /// Number of products in the universe.
    #[arg(long, default_value_t = 5)]
    products: usize,
    /// Products to purchase, comma separated (default: all).
    #[arg(long, value_delimiter = ',')]
    purchase: Option<Vec<String>>,
    /// Seeded fault to inject into the scenario.
    #[arg(long)]
    mutate: Option<Mutant>,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    source: Source,
    /// Policy for the substitution obligation (default: the scenario's own).
    #[arg(long)]
    policy: Option<Policy>,
    /// Maximum number of states explored per obligation.
    #[arg(long, env = "SUBST_STATE_CAP", default_value_t = DEFAULT_STATE_CAP)]
    state_cap: usize,
    /// Also write the reports to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Initial {
    Sys1,
    Sys2,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    policy: Option<Policy>,
    /// Fail the source after this many of its events.
    #[arg(long, conflicts_with = "fail_when")]
    fail_at: Option<usize>,
    /// Fail the source at the first state satisfying the expression in this file.
    #[arg(long)]
    fail_when: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    max_steps: usize,
    /// System m13 starts with.
    #[arg(long, value_enum, default_value = "sys1")]
    initial: Initial,
    /// Trace file (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_enum, default_value = "sys1")]
    initial: Initial,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ImportArgs {
    #[arg(long)]
    machine: PathBuf,
    /// Write the canonical form of the file here.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Why a command did not succeed.
enum Failure {
    /// Exit 1: a property does not hold or a run could not complete.
    Violation(String),
    /// Exit 2: the command line or an input file is unusable.
    Config(String),
}

type Outcome = Result<(), Failure>;

fn config(e: impl ToString) -> Failure {
    Failure::Config(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::List => {
            list();
            Ok(())
        }
        Command::Check(a) => check(a),
        Command::Simulate(a) => simulate(a),
        Command::Export(a) => export(a),
        Command::Import(a) => import(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation(msg)) => {
            eprintln!("subst: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("subst: error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn list() {
    let about = [
        "abstract selection into one cart",
        "Sys1: one cart on one website",
        "Sys2: two carts on two websites",
        "both systems, running one chosen at initialisation",
        "Sys1 substituted by Sys2, cold start",
        "Sys1 substituted by Sys2, hot start",
    ];
    println!("scenarios:");
    for (name, text) in SCENARIOS.iter().zip(about) {
        println!("  {name:<6} {text}");
    }
    println!("mutants:");
    for m in Mutant::ALL {
        let targets: Vec<&str> = SCENARIOS
            .iter()
            .copied()
            .filter(|s| m.applies_to(s))
            .collect();
        println!("  {:<24} {}", m.as_str(), targets.join(", "));
    }
}

fn params(src: &Source) -> CommerceParams {
    CommerceParams {
        products: src.products,
        purchase: src.purchase.clone(),
    }
}

/// Turns a file's substitution section into a config.
fn file_config(
    m: &Machine,
    s: &SubstitutionSection,
    policy: Option<Policy>,
) -> Result<SubstitutionConfig, Failure> {
    let system = |id: &str| {
        m.system(id)
            .cloned()
            .ok_or_else(|| config(format!("substitution names unknown system `{id}`")))
    };
    let policy = policy.unwrap_or(if s.hinv.is_some() {
        Policy::Hot
    } else {
        Policy::Cold
    });
    Ok(SubstitutionConfig::new(
        system(&s.source)?,
        system(&s.target)?,
        s.hinv.clone(),
        policy,
        Trigger::Manual,
    ))
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| config(format!("{}: {e}", path.display())))
}

fn load_file(path: &Path) -> Result<(Machine, Option<SubstitutionSection>), Failure> {
    let file =
        parse_machine_file(&read(path)?).map_err(|e| config(format!("{}: {e}", path.display())))?;
    Ok((file.machine, file.substitution))
}

/// Scenarios selected by `src`, with the substitution policy overridden.
fn load(src: &Source, policy: Option<Policy>) -> Result<Vec<Scenario>, Failure> {
    let mut out = match (&src.scenario, &src.machine) {
        (Some(name), None) => {
            commerce::scenarios(name, &params(src), src.mutate).map_err(config)?
        }
        (None, Some(path)) => {
            if src.mutate.is_some() {
                return Err(config("--mutate applies to built-in scenarios only"));
            }
            let (m, sub) = load_file(path)?;
            let mut s = Scenario::new(m.name(), m.clone());
            s.substitution = sub.map(|sub| file_config(&m, &sub, policy)).transpose()?;
            vec![s]
        }
        _ => return Err(config("give exactly one of --scenario and --machine")),
    };
    if let Some(p) = policy {
        for s in &mut out {
            if let Some(cfg) = &mut s.substitution {
                cfg.policy = p;
            }
        }
    }
    Ok(out)
}

fn check(a: CheckArgs) -> Outcome {
    let scenarios = load(&a.source, a.policy)?;
    let mut lines = String::new();
    let mut failed = Vec::new();
    for s in &scenarios {
        let reports = s.check(a.state_cap).map_err(|e| match e {
            ObligationError::StateCapExceeded { .. } => {
                Failure::Violation(format!("{}: {e}", s.name))
            }
            other => config(format!("{}: {other}", s.name)),
        })?;
        for r in &reports {
            let m = match (&r.kind, &s.refinement) {
                (subst_core::ObligationKind::Refinement, Some(link)) => &link.concrete,
                _ => &s.machine,
            };
            lines.push_str(&r.to_json(m).to_string());
            lines.push('\n');
            if !r.passed {
                failed.push(format!("{} {}", s.name, r.kind.as_str()));
            }
        }
    }
    print!("{lines}");
    if let Some(path) = &a.out {
        write(path, &lines)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Violation(format!("failed: {}", failed.join(", "))))
    }
}

fn pick(scenarios: Vec<Scenario>, initial: Initial) -> Scenario {
    let index = match initial {
        Initial::Sys1 => 0,
        Initial::Sys2 => 1,
    };
    let len = scenarios.len();
    scenarios
        .into_iter()
        .nth(index.min(len - 1))
        .expect("at least one scenario")
}

fn simulate(a: SimulateArgs) -> Outcome {
    let s = pick(load(&a.source, a.policy)?, a.initial);
    let m = &s.machine;
    let trigger = match (a.fail_at, &a.fail_when) {
        (Some(k), _) => Some(Trigger::AtStep(k)),
        (None, Some(path)) => {
            let json: serde_json::Value = serde_json::from_str(&read(path)?)
                .map_err(|e| config(format!("{}: {e}", path.display())))?;
            Some(Trigger::WhenPred(expr_from_json(&json).map_err(config)?))
        }
        (None, None) => None,
    };
    let cfg = match (s.substitution.clone(), trigger) {
        (Some(mut cfg), Some(t)) => {
            cfg.trigger = t;
            Some(cfg)
        }
        (Some(cfg), None) => Some(cfg),
        (None, Some(_)) => {
            return Err(config(format!(
                "`{}` has no substitution to trigger",
                s.name
            )))
        }
        (None, None) => None,
    };

    let trace = run_scenario(m, cfg.as_ref(), Driver::Random, a.seed, a.max_steps).map_err(
        |e| match e {
            SubstitutionError::Invalid(_) | SubstitutionError::WrongActiveSystem { .. } => {
                config(e)
            }
            other => Failure::Violation(other.to_string()),
        },
    )?;
    let text = trace.to_jsonl(m);
    match &a.out {
        Some(path) => write(path, &text)?,
        None => print!("{text}"),
    }

    let mut broken = None;
    for r in &trace.records {
        if let Some(i) = violated_invariant(m, &r.valuation).map_err(config)? {
            broken = Some((r.step, i));
            break;
        }
    }
    let last = trace.last();
    let mut summary = format!("{}: {} events", s.name, trace.event_count());
    match trace.switch_record() {
        Some((step, rec)) => summary.push_str(&format!(
            ", {} switch at record {step} (variant {} -> {}, hinv {})",
            rec.policy, rec.pre_variant, rec.post_variant, rec.hinv_holds
        )),
        None => summary.push_str(", no switch"),
    }
    let variants: Vec<String> = last
        .variants
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    if !variants.is_empty() {
        summary.push_str(&format!(", final variants {}", variants.join(" ")));
    }
    if let Some(active) = &last.active {
        summary.push_str(&format!(", active {active}"));
    }
    let done = m
        .value(&last.valuation, commerce::DONE)
        .and_then(|v| v.as_bool());
    if let Some(done) = done {
        summary.push_str(&format!(", {}={done}", commerce::DONE));
    }
    match broken {
        None => summary.push_str(", invariants hold on every record"),
        Some((step, i)) => summary.push_str(&format!(", invariant #{i} broken at record {step}")),
    }
    if a.out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    match broken {
        None => Ok(()),
        Some(_) => Err(Failure::Violation(
            "invariant violated during the run".into(),
        )),
    }
}

fn export(a: ExportArgs) -> Outcome {
    if a.source.machine.is_some() {
        return Err(config(
            "export takes --scenario; use import to re-emit a file",
        ));
    }
    let s = pick(load(&a.source, None)?, a.initial);
    let section = s.substitution.as_ref().map(|cfg| SubstitutionSection {
        source: cfg.source.id.clone(),
        target: cfg.target.id.clone(),
        hinv: cfg.hinv.as_ref().map(|h| h.0.clone()),
    });
    let text = machine_to_json(&s.machine, section.as_ref());
    match &a.out {
        Some(path) => write(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn import(a: ImportArgs) -> Outcome {
    let (m, sub) = load_file(&a.machine)?;
    if let Some(s) = &sub {
        file_config(&m, s, None)?.validate(&m).map_err(config)?;
    }
    let text = machine_to_json(&m, sub.as_ref());
    if let Some(path) = &a.out {
        write(path, &text)?;
    }
    println!(
        "{}: {} variables, {} events, {} systems, {} invariants{}",
        m.name(),
        m.variables().len(),
        m.events().len(),
        m.partition().systems().len(),
        m.invariants().len(),
        if sub.is_some() { ", substitution" } else { "" }
    );
    Ok(())
}
