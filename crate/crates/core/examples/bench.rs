//! A small Monte Carlo comparison of the three aligners, written to a temp directory.
use fgo_align::bench::{emit_outputs, parse_config, run_benchmark};

fn main() {
    let cfg = parse_config(
        r#"
monte_carlo_runs = 3
rmse_windows = [[200, 250], [250, 300]]

[scenario]
duration_s = 300
"#,
    )
    .unwrap();
    let report = run_benchmark(&cfg).unwrap();
    for row in &report.metrics {
        println!(
            "{:<7} {:>4}-{:<4} {:>8.4} deg ({} runs)",
            row.method.name(),
            row.window_start_s,
            row.window_end_s,
            row.rmse_deg,
            row.runs_used
        );
    }
    let dir = std::env::temp_dir().join("fgo-align-bench");
    for f in emit_outputs(&report, &dir).unwrap() {
        println!("wrote {}", f.display());
    }
}
