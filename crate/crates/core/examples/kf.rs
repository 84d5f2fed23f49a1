//! Two-procedure baseline: coarse alignment for 120 s, then a zero-velocity Kalman filter.
use fgo_align::kf::{run_two_procedure, KfConfig};
use fgo_align::rotation::{deg_per_hour, heading_deg, wrap_deg};
use fgo_align::sim::{true_heading_deg, ScenarioConfig};
use fgo_align::simulate;

fn main() {
    let cfg = ScenarioConfig::reference();
    let sim = simulate(&cfg).unwrap();
    let run = run_two_procedure(&sim.samples, &cfg.earth, &KfConfig::default()).unwrap();
    println!("handover at {} s", run.handover_t);
    for e in run.epochs.iter().filter(|e| (e.t.round() as u64).is_multiple_of(100)) {
        let Some(c) = &e.c_b_n else { continue };
        let err = wrap_deg(heading_deg(c) - true_heading_deg(&sim.truth, e.t).unwrap());
        println!(
            "t={:>5.0} s  heading error {err:>8.3} deg  gyro bias {:?} deg/h",
            e.t,
            e.gyro_bias.map(deg_per_hour).as_slice()
        );
    }
    let sigma: Vec<f64> = (0..3).map(|i| run.final_state.p[(i, i)].sqrt().to_degrees()).collect();
    println!("final attitude sigma {sigma:.4?} deg");
}
