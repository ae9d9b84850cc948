// Runs the closed-form and Monte-Carlo verification suites and prints the
// pass/fail table.

use hiervc::cli::suite::{format_table, run_suite, Suite, SuiteOptions};

pub fn run_example() {
    let opts = SuiteOptions::default();
    let reports: Vec<_> = [Suite::Marginal, Suite::Score, Suite::Tracker]
        .into_iter()
        .map(|s| run_suite(s, &opts).unwrap())
        .collect();
    print!("{}", format_table(&reports));
    assert!(reports.iter().all(|r| r.passed()));
}

#[allow(dead_code)]
fn main() {
    run_example();
}
