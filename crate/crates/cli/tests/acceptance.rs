//! Acceptance criteria, one line per criterion.
//!
//! Runs without the libtest harness so the lines are always printed, in order.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use st_meta::selftest;

const SELFTEST_BUDGET: Duration = Duration::from_secs(300);

fn main() -> ExitCode {
    let mut failed = 0;
    for r in selftest::run_all() {
        println!("{r}");
        if !r.passed {
            failed += 1;
        }
    }

    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_st-meta"))
        .arg("selftest")
        .output()
        .expect("cannot launch st-meta");
    let elapsed = start.elapsed();
    let lines = String::from_utf8_lossy(&out.stdout).lines().count();
    let passed = out.status.success() && elapsed < SELFTEST_BUDGET && lines == selftest::CRITERIA.len();
    println!(
        "criterion 11 {} selftest end to end ({:.2} s): exit {:?}, {} report lines, budget {} s",
        if passed { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        out.status.code(),
        lines,
        SELFTEST_BUDGET.as_secs()
    );
    if !passed {
        failed += 1;
    }

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all acceptance criteria passed");
        ExitCode::SUCCESS
    }
}
