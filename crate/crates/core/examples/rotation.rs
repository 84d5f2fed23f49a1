//! SO(3) helpers: Euler round trip, exp/log, Earth rotation.
use fgo_align::rotation::{
    dcm_to_heading_pitch_roll, earth_rotation_dcm, heading_pitch_roll_to_dcm, orthogonality_defect, so3_exp, so3_log,
};
use fgo_align::{EarthParams, EulerAngles, Vector3};

fn main() {
    let angles = EulerAngles { heading: 30.0, pitch: 2.0, roll: -1.5 };
    let c = heading_pitch_roll_to_dcm(&angles);
    println!("C_b^n =\n{}", c.matrix());
    println!("back to angles: {:?}", dcm_to_heading_pitch_roll(&c).unwrap());

    let phi = Vector3::new(0.1, -0.2, 0.3);
    let r = so3_exp(&phi);
    println!("log(exp(phi)) = {:?}", so3_log(&r).as_slice());
    println!("orthogonality defect {:.1e}", orthogonality_defect(r.matrix()));

    let earth = EarthParams::from_latitude_deg(32.0);
    let one_hour = earth_rotation_dcm(&earth, 3600.0);
    println!("Earth turns {:.4} deg per hour", so3_log(&one_hour).norm().to_degrees());
}
