//! Runs the oracle and gradient suite and prints the result table.

fn main() {
    let results = semvox::check::run_all();
    print!("{}", semvox::check::format_table(&results));
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{failed} of {} rows failed", results.len());
}
