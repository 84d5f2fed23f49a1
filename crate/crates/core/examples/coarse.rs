//! Optimization-based coarse alignment on a noisy stream.
use fgo_align::coarse::{coarse_align, DEFAULT_PAIR_INTERVAL};
use fgo_align::rotation::{heading_deg, wrap_deg};
use fgo_align::sim::{true_heading_deg, ScenarioConfig};
use fgo_align::simulate;

fn main() {
    let cfg = ScenarioConfig::reference();
    let sim = simulate(&cfg).unwrap();
    let epochs = coarse_align(&sim.samples, &cfg.earth, DEFAULT_PAIR_INTERVAL).unwrap();
    for e in epochs.iter().filter(|e| (e.t.round() as u64).is_multiple_of(100)) {
        let Some(c) = &e.c_b_n else { continue };
        let err = wrap_deg(heading_deg(c) - true_heading_deg(&sim.truth, e.t).unwrap());
        println!("t={:>5.0} s  heading error {err:>8.3} deg", e.t);
    }
}
