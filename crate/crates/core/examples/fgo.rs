//! Factor graph alignment: one batch solve with bias estimates, then the epoch series.
use fgo_align::fgo::{align_batch, align_series, attitude_output, FgoConfig};
use fgo_align::rotation::{deg_per_hour, heading_deg, wrap_deg};
use fgo_align::sim::{true_heading_deg, ScenarioConfig, MILLI_G};
use fgo_align::simulate;

fn main() {
    let cfg = ScenarioConfig::reference();
    let sim = simulate(&cfg).unwrap();
    let fgo = FgoConfig::default();

    let batch = align_batch(&sim.samples, &cfg.earth, &fgo).unwrap();
    let last = batch.graph.keyframes.last().unwrap();
    let c = attitude_output(&batch.solution.nodes, &batch.solution.constant, last, &cfg.earth);
    let report = &batch.solution.report;
    println!(
        "batch: {} nodes, {} iterations, cost {:.3e} -> {:.3e}",
        batch.graph.len(),
        report.iterations,
        report.initial_cost,
        report.final_cost
    );
    println!("heading error {:.3} deg", wrap_deg(heading_deg(&c) - true_heading_deg(&sim.truth, last.t).unwrap()));
    let bias = batch.total_bias();
    println!("gyro bias {:?} deg/h", bias.gyro.map(deg_per_hour).as_slice());
    println!("accel bias {:?} mg", (bias.accel / MILLI_G).as_slice());

    let series = align_series(&sim.samples, &cfg.earth, &FgoConfig { stride: 25, ..fgo }).unwrap();
    for e in &series.epochs {
        if let Some(c) = &e.c_b_n {
            let err = wrap_deg(heading_deg(c) - true_heading_deg(&sim.truth, e.t).unwrap());
            println!("t={:>5.0} s  heading error {err:>8.3} deg", e.t);
        }
    }
}
