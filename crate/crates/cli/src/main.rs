//! Command-line runner for scenario files, audit logs and registry snapshots.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acnbp::audit::AuditLog;
use acnbp::cps::ScoringWeights;
use acnbp::encoding::{canonical_decode, canonical_encode};
use acnbp::model::Anri;
use acnbp::registry::{verify_anri, RegistrySnapshot};
use acnbp::scenario::{run_scenario, RunOptions, Scenario, ScenarioRun};
use acnbp::sim::SimReport;
use clap::{Parser, Subcommand};
use serde::Serialize;

const EXIT_MISMATCH: u8 = 1;
const EXIT_SCENARIO: u8 = 2;
const EXIT_BREACH: u8 = 3;

#[derive(Parser)]
#[command(name = "acnbp", version, about = "Run capability negotiation scenarios and check their artefacts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its report, trace, audit logs and registry snapshot.
    Run {
        path: PathBuf,
        /// Overrides the scenario's network seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Scoring weights `compat,security,reputation,cost,risk`.
        #[arg(long)]
        weights: Option<ScoringWeights>,
        /// Check the scenario's expected outcomes; exit 1 on mismatch.
        #[arg(long = "assert")]
        check: bool,
        /// Output directory; defaults to `acnbp-out/<scenario name>`.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// Verify the hash chain of an audit log file.
    VerifyAudit { log: PathBuf },
    /// List and verify the records in a registry snapshot or a single ANRI file.
    InspectAnri { snapshot: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { path, seed, weights, check, trace_dir } => run(&path, seed, weights, check, trace_dir),
        Command::VerifyAudit { log } => verify_audit(&log),
        Command::InspectAnri { snapshot } => inspect_anri(&snapshot),
    };
    ExitCode::from(code)
}

#[derive(Serialize)]
struct ReportFile<'a> {
    scenario: &'a str,
    asserted: bool,
    mismatches: &'a [String],
    report: &'a SimReport,
}

fn run(path: &Path, seed: Option<u64>, weights: Option<ScoringWeights>, check: bool, dir: Option<PathBuf>) -> u8 {
    let scenario = match Scenario::load(path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return EXIT_SCENARIO;
        }
    };
    let run = match run_scenario(&scenario, &RunOptions { seed, weights }) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return EXIT_SCENARIO;
        }
    };
    let dir = dir.unwrap_or_else(|| Path::new("acnbp-out").join(&scenario.name));
    if let Err(e) = write_outputs(&dir, &scenario, &run, check) {
        eprintln!("cannot write outputs to {}: {e}", dir.display());
        return EXIT_SCENARIO;
    }
    print_summary(&scenario, &run, check, &dir);
    let r = &run.output.report;
    // Agents still mid-protocol only count when the run drained on its own.
    let stuck = !r.truncated && !r.nonterminal.is_empty();
    let breached = stuck || !r.invariant_breaches.is_empty() || !r.audit_valid || !r.commitments_verified;
    if breached {
        EXIT_BREACH
    } else if check && !run.mismatches.is_empty() {
        EXIT_MISMATCH
    } else {
        0
    }
}

fn write_outputs(dir: &Path, scenario: &Scenario, run: &ScenarioRun, check: bool) -> std::io::Result<()> {
    let audit_dir = dir.join("audit");
    fs::create_dir_all(&audit_dir)?;
    let report = ReportFile {
        scenario: &scenario.name,
        asserted: check,
        mismatches: if check { &run.mismatches } else { &[] },
        report: &run.output.report,
    };
    fs::write(dir.join("report.json"), canonical_encode(&report).map_err(std::io::Error::other)?)?;
    fs::write(dir.join("trace.ndjson"), &run.output.trace)?;
    fs::write(dir.join("registry.snapshot"), run.output.world.registry.export_snapshot())?;
    for (id, log) in &run.output.audits {
        log.save(&audit_dir.join(format!("{id}.log")))?;
    }
    Ok(())
}

fn print_summary(scenario: &Scenario, run: &ScenarioRun, check: bool, dir: &Path) {
    let r = &run.output.report;
    println!("scenario {} (seed {}), ended at t={} ms{}", scenario.name, r.seed, r.end_ms, if r.truncated { ", truncated" } else { "" });
    for reg in &r.registrations {
        if reg.result != "ok" {
            println!("  registration {} at {}: {}", reg.agent, reg.time_ms, reg.result);
        }
    }
    if let Some(q) = &r.requester {
        println!("requester {}: {}", q.id, q.phase);
        for (i, id) in q.ranking.iter().enumerate() {
            let total = q.scores.iter().find(|s| &s.agent == id).map_or(0.0, |s| s.total);
            println!("  {}. {id}  score {total:.4}", i + 1);
        }
        for (id, why) in &q.eliminated {
            println!("  eliminated {id}: {why}");
        }
        let sessions: Vec<String> = q.sessions.iter().map(ToString::to_string).collect();
        println!("  sessions: [{}]", sessions.join(", "));
        for f in &q.session_failures {
            println!("  session failed with {}: {}", f.agent, f.reason);
        }
        match &q.selected {
            Some(s) => println!("  selected {s}, bound: {}", q.binding.is_some()),
            None => println!("  nothing selected"),
        }
        match (&q.outcome, &q.abort_reason) {
            (Some(o), _) => println!("  outcome {o:?}{}", q.abort_reason.as_deref().map_or(String::new(), |a| format!(" ({a})"))),
            (None, Some(a)) => println!("  aborted: {a}"),
            (None, None) => println!("  no outcome"),
        }
    }
    for (id, after) in &r.reputations {
        let before = r.initial_reputations.get(id).copied().unwrap_or(*after);
        if before != *after {
            println!("reputation {id}: {before:.4} -> {after:.4}");
        }
    }
    let mut rejections: std::collections::BTreeMap<&str, usize> = Default::default();
    for x in &r.rejections {
        *rejections.entry(&x.error).or_default() += 1;
    }
    if !rejections.is_empty() {
        let parts: Vec<String> = rejections.iter().map(|(k, v)| format!("{k} x{v}")).collect();
        println!("rejected envelopes: {}", parts.join(", "));
    }
    for (i, f) in &r.flood {
        println!("flooder {i}: registrations {:?}, queries {:?}", f.registrations, f.queries);
    }
    println!(
        "delivered {}, dropped {}, duplicated {}, injected {}; audit chains {}",
        r.delivered,
        r.dropped,
        r.duplicated,
        r.injected,
        if r.audit_valid { "valid" } else { "BROKEN" }
    );
    for b in r.invariant_breaches.iter().chain(&r.nonterminal) {
        println!("INVARIANT: {b}");
    }
    if check {
        if run.mismatches.is_empty() {
            println!("expectations: all met");
        } else {
            for m in &run.mismatches {
                println!("MISMATCH: {m}");
            }
        }
    }
    println!("outputs in {}", dir.display());
}

fn verify_audit(path: &Path) -> u8 {
    let log = match AuditLog::load(path) {
        Ok(l) => l,
        Err(e) => {
            return match e.record_index() {
                Some(i) => {
                    println!("{}: INVALID at record {i} ({e})", path.display());
                    EXIT_MISMATCH
                }
                None => {
                    eprintln!("{}: {e}", path.display());
                    EXIT_SCENARIO
                }
            };
        }
    };
    let check = log.verify();
    match check.first_bad_index {
        None => {
            let head = log.records().last().map_or_else(|| "genesis".to_owned(), |r| hex_of(&r.hash));
            println!("{}: valid, {} records, head {head}", path.display(), log.len());
            0
        }
        Some(i) => {
            println!("{}: INVALID at record {i}", path.display());
            EXIT_MISMATCH
        }
    }
}

fn hex_of(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn inspect_anri(path: &Path) -> u8 {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return EXIT_SCENARIO;
        }
    };
    let (root, records) = match canonical_decode::<RegistrySnapshot>(&bytes) {
        Ok(s) => {
            println!("snapshot taken at {} ms, {} records", s.taken_at, s.records.len());
            (Some(s.ca_root), s.records)
        }
        Err(_) => match canonical_decode::<Anri>(&bytes) {
            Ok(a) => (None, vec![a]),
            Err(e) => {
                eprintln!("{}: neither a registry snapshot nor an ANRI: {e}", path.display());
                return EXIT_SCENARIO;
            }
        },
    };
    let mut all_ok = true;
    for a in &records {
        let self_ok = a.self_signature_valid();
        let verdict = match root {
            Some(root) => verify_anri(a, &root),
            None => self_ok,
        };
        all_ok &= verdict;
        println!("{}", a.id);
        println!("  location {}", a.location);
        println!(
            "  reputation {:.4}, cost {} per unit, expires at {} ms",
            a.metadata.reputation_or_default(),
            a.metadata.cost_per_unit,
            a.metadata.expires_at()
        );
        for c in &a.capabilities {
            let certs: Vec<&str> = c.security.certifications.iter().map(String::as_str).collect();
            println!("  capability {} ({:?}, certs [{}])", c.desc, c.security.encryption_level, certs.join(", "));
        }
        println!("  record hash {}", hex_of(&a.record_hash()));
        println!(
            "  self-signature {}{}",
            if self_ok { "valid" } else { "INVALID" },
            match root {
                Some(_) => format!(", credentials {}", if verdict { "valid" } else { "INVALID" }),
                None => String::new(),
            }
        );
    }
    if all_ok {
        0
    } else {
        EXIT_MISMATCH
    }
}
