//! Simulates the reference scenario and prints the first samples and the true attitude.
use fgo_align::sim::{true_heading_deg, ScenarioConfig};
use fgo_align::simulate;

fn main() {
    let cfg = ScenarioConfig { duration: 180.0, ..ScenarioConfig::reference() };
    let sim = simulate(&cfg).expect("valid scenario");
    println!("{} samples at {} Hz", sim.samples.len(), 1.0 / cfg.dt());
    for s in sim.samples.iter().take(3) {
        println!("t={:.3} gyro={:?} accel={:?}", s.t, s.gyro.as_slice(), s.accel.as_slice());
    }
    for t in [0.0, 30.0, 60.0, 90.0, 120.0, 180.0] {
        println!(
            "t={t:>5.0} s  table {:>7.2} deg  heading {:>8.3} deg",
            cfg.table_angle(t).to_degrees(),
            true_heading_deg(&sim.truth, t).unwrap()
        );
    }
}
