//! Runs every acceptance criterion and prints one line per criterion.
//! Exits nonzero if any gating criterion fails.

use std::io::Write;
use std::process::ExitCode;

use habitdp::acceptance::{all_gating_passed, run_acceptance, AcceptanceOptions, Event};

fn main() -> ExitCode {
    let opts = AcceptanceOptions::default();
    let verdicts = run_acceptance(&opts, &mut |event| match event {
        Event::Progress(msg) => eprintln!("  .. {msg}"),
        Event::Verdict(v) => {
            println!("{v}");
            let _ = std::io::stdout().flush();
        }
    });
    println!();
    println!("acceptance summary:");
    for v in &verdicts {
        let tag = match (v.passed, v.gating) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "SOFT-MISS",
        };
        println!("  {tag:9} [{}] {}", v.id, v.title);
    }
    if all_gating_passed(&verdicts) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
