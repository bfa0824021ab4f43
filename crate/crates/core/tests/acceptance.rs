//! The fifteen acceptance criteria at their stated sizes and tolerances.
//! Prints one PASS/FAIL line per criterion and fails if any criterion fails.
//!
//! `SUPERDIFF_ACCEPTANCE=fast` runs the small instances instead (smoke test).

use std::process::ExitCode;

use superdiff::acceptance::{run_criterion, Scale};

fn main() -> ExitCode {
    let scale = match std::env::var("SUPERDIFF_ACCEPTANCE").as_deref() {
        Ok("fast") => Scale::Fast,
        _ => Scale::Full,
    };
    println!("acceptance suite ({scale:?})");
    let mut failed = Vec::new();
    for id in 1..=15u8 {
        let r = run_criterion(id, scale);
        println!("{}", r.line());
        if !r.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: 15/15 PASS");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAIL {failed:?}");
        ExitCode::FAILURE
    }
}
