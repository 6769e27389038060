use std::process::ExitCode;

use clap::Parser;
use wf_simplex_cli::{execute, parse_config, write_artifacts, Flags};

fn main() -> ExitCode {
    let flags = match Flags::try_parse() {
        Ok(f) => f,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let cfg = match parse_config(&flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    let outcomes = execute(&cfg);
    for o in &outcomes {
        println!("{} {}", if o.report.pass() { "PASS" } else { "FAIL" }, o.report.id);
        for c in o.report.checks.iter().filter(|c| !c.pass) {
            println!("    failed check {}: {:.6e}", c.name, c.value);
        }
        for n in &o.report.notes {
            println!("    note: {n}");
        }
    }
    match write_artifacts(&cfg, outcomes) {
        Ok(a) => {
            println!("wrote {} and {}", a.json.display(), a.csv.display());
            if a.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
