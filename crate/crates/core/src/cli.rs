//! Command-line front end.
//!
//! `run` writes the CSV log plus two sidecars next to it: `<out>.report.json`
//! (the metrics report) and `<out>.audit.json` (terminal state, incidents,
//! plans, decisions and command audit). In gate mode it also writes a session
//! file so `decide` can record a verdict and replay the run with it.
//!
//! Exit codes: 0 completed, 1 invalid input or usage error, 2 blocked,
//! 3 watchdog timeout.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{HitlMode, ScenarioConfig};
use crate::control::metrics::MetricsReport;
use crate::control::runlog::{read_csv, RunAudit, RunLog, TerminalState};
use crate::control::{run_scenario_with, NullObserver, RunError};
use crate::hitl::{AutoApprove, DecisionSource, PlanStatus, RecordedDecisions, Verdict};

pub const EXIT_COMPLETED: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_BLOCKED: i32 = 2;
pub const EXIT_TIMEOUT: i32 = 3;

pub const DEFAULT_SESSION: &str = "twinsync.session.json";

#[derive(Debug, Parser)]
#[command(name = "twinsync", version, about = "Physical/virtual robot twin synchronization runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write its CSV log and sidecars.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Approve every gated plan whose rehearsal completed.
        #[arg(long)]
        auto_approve: bool,
        /// Session file used by `decide`.
        #[arg(long, default_value = DEFAULT_SESSION)]
        session: PathBuf,
    },
    /// Recompute the metrics report from a CSV log.
    Report { log: PathBuf },
    /// Serve the live REST/WebSocket interface while running a scenario.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        port: u16,
        /// Simulation speed relative to wall-clock time.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
    /// Record a verdict for a pending plan and replay the run with it.
    Decide {
        plan_id: String,
        verdict: Verdict,
        #[arg(long)]
        actor: String,
        #[arg(long, default_value = DEFAULT_SESSION)]
        session: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDecision {
    pub verdict: Verdict,
    pub actor: String,
}

/// Everything needed to replay a gated run deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub v: u32,
    pub config: ScenarioConfig,
    pub out: PathBuf,
    pub decisions: BTreeMap<String, SessionDecision>,
}

impl Session {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read session {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("malformed session {}: {e}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<(), String> {
        let text = serde_json::to_string_pretty(self).expect("session serializes");
        std::fs::write(path, text).map_err(|e| format!("cannot write session {}: {e}", path.display()))
    }

    fn source(&self) -> RecordedDecisions {
        RecordedDecisions(
            self.decisions
                .iter()
                .map(|(id, d)| (id.clone(), (d.verdict, d.actor.clone())))
                .collect(),
        )
    }
}

pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn exit_code(state: TerminalState) -> i32 {
    match state {
        TerminalState::Completed => EXIT_COMPLETED,
        TerminalState::Blocked => EXIT_BLOCKED,
        TerminalState::WatchdogTimeout => EXIT_TIMEOUT,
    }
}

/// Writes the CSV log and both sidecars; returns the metrics report.
pub fn write_outputs(log: &RunLog, out: &Path) -> Result<MetricsReport, String> {
    let io = |e: &dyn std::fmt::Display| format!("cannot write {}: {e}", out.display());
    let f = File::create(out).map_err(|e| io(&e))?;
    log.write_csv(BufWriter::new(f)).map_err(|e| io(&e))?;
    let report = MetricsReport::from_rows(&log.rows, log.audit.tick_ms, Some(log.terminal())).map_err(|e| e.to_string())?;
    let write_json = |path: PathBuf, text: String| std::fs::write(&path, text).map_err(|e| format!("cannot write {}: {e}", path.display()));
    write_json(sidecar(out, ".report.json"), serde_json::to_string_pretty(&report).expect("report serializes"))?;
    write_json(sidecar(out, ".audit.json"), serde_json::to_string_pretty(&log.audit).expect("audit serializes"))?;
    Ok(report)
}

fn execute(cfg: &ScenarioConfig, decisions: &mut dyn DecisionSource, out: &Path) -> i32 {
    let log = match run_scenario_with(cfg, decisions, &mut NullObserver) {
        Ok(l) => l,
        Err(RunError::Config(e)) => {
            eprintln!("invalid config: {e}");
            return EXIT_INVALID;
        }
        Err(e) => {
            eprintln!("{e}");
            return EXIT_INVALID;
        }
    };
    let report = match write_outputs(&log, out) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_INVALID;
        }
    };
    print!("{}", report.to_text());
    for p in &log.audit.plans {
        println!(
            "plan {} ({}) {}",
            p.id,
            p.trigger.kind,
            serde_json::to_value(p.status).expect("status serializes").as_str().unwrap_or_default()
        );
        if p.status == PlanStatus::AwaitingDecision {
            println!("  decide with: twinsync decide {} approve|reject --actor <name>", p.id);
        }
    }
    exit_code(log.terminal())
}

fn cmd_run(config: &Path, out: &Path, auto_approve: bool, session: &Path) -> i32 {
    let mut cfg = match ScenarioConfig::load(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("invalid config {}: {e}", config.display());
            return EXIT_INVALID;
        }
    };
    if auto_approve {
        cfg.hitl_mode = HitlMode::AutoApprove;
    }
    if cfg.hitl_mode == HitlMode::AutoApprove {
        return execute(&cfg, &mut AutoApprove, out);
    }
    let s = Session {
        v: 1,
        config: cfg,
        out: out.to_path_buf(),
        decisions: BTreeMap::new(),
    };
    if let Err(e) = s.save(session) {
        eprintln!("{e}");
        return EXIT_INVALID;
    }
    execute(&s.config, &mut s.source(), out)
}

fn cmd_report(log: &Path) -> i32 {
    let rows = match File::open(log).map_err(|e| e.to_string()).and_then(|f| read_csv(BufReader::new(f)).map_err(|e| e.to_string())) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("cannot read log {}: {e}", log.display());
            return EXIT_INVALID;
        }
    };
    let audit: Option<RunAudit> = std::fs::read_to_string(sidecar(log, ".audit.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    let tick_ms = audit.as_ref().map_or(1.0, |a| a.tick_ms);
    match MetricsReport::from_rows(&rows, tick_ms, audit.map(|a| a.terminal_state)) {
        Ok(r) => {
            println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
            EXIT_COMPLETED
        }
        Err(e) => {
            eprintln!("{e}");
            EXIT_INVALID
        }
    }
}

fn cmd_decide(plan_id: &str, verdict: Verdict, actor: &str, session: &Path) -> i32 {
    let mut s = match Session::load(session) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_INVALID;
        }
    };
    if let Some(prev) = s.decisions.get(plan_id) {
        eprintln!("conflict: plan {plan_id} already decided ({:?} by {})", prev.verdict, prev.actor);
        return EXIT_INVALID;
    }
    let audit: Option<RunAudit> = std::fs::read_to_string(sidecar(&s.out, ".audit.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    let known = audit
        .as_ref()
        .and_then(|a| a.plans.iter().find(|p| p.id == plan_id))
        .map(|p| p.status);
    match known {
        None => {
            eprintln!("not found: no plan {plan_id} in the last run of this session");
            return EXIT_INVALID;
        }
        Some(PlanStatus::AwaitingDecision) => {}
        Some(other) => {
            eprintln!("conflict: plan {plan_id} is {other:?}, not awaiting a decision");
            return EXIT_INVALID;
        }
    }
    s.decisions.insert(
        plan_id.to_string(),
        SessionDecision {
            verdict,
            actor: actor.to_string(),
        },
    );
    if let Err(e) = s.save(session) {
        eprintln!("{e}");
        return EXIT_INVALID;
    }
    execute(&s.config, &mut s.source(), &s.out)
}

fn cmd_serve(config: &Path, port: u16, speed: f64) -> i32 {
    let cfg = match ScenarioConfig::load(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("invalid config {}: {e}", config.display());
            return EXIT_INVALID;
        }
    };
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    match rt.block_on(crate::service::serve(cfg, port, crate::service::ServeOptions { speed })) {
        Ok(()) => EXIT_COMPLETED,
        Err(e) => {
            eprintln!("serve failed: {e}");
            EXIT_INVALID
        }
    }
}

/// Parses `args` (including the program name) and executes; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_COMPLETED };
        }
    };
    match cli.command {
        Command::Run {
            config,
            out,
            auto_approve,
            session,
        } => cmd_run(&config, &out, auto_approve, &session),
        Command::Report { log } => cmd_report(&log),
        Command::Serve { config, port, speed } => cmd_serve(&config, port, speed),
        Command::Decide {
            plan_id,
            verdict,
            actor,
            session,
        } => cmd_decide(&plan_id, verdict, &actor, &session),
    }
}
