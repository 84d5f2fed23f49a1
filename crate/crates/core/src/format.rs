//! Number formatting shared by the CSV writers.

use std::fmt;

/// Formats a float with nine significant digits, `%.9g` style.
#[derive(Debug, Clone, Copy)]
pub struct Sig9(pub f64);

impl fmt::Display for Sig9 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let x = self.0;
        if !x.is_finite() {
            return write!(f, "{}", if x.is_nan() { "nan".to_string() } else if x > 0.0 { "inf".into() } else { "-inf".into() });
        }
        if x == 0.0 {
            return f.write_str("0");
        }
        // Round first so the exponent reflects the rounded mantissa (9.999999999 → 10).
        let sci = format!("{:.8e}", x);
        let (mantissa, exp) = sci.split_once('e').expect("exponent present");
        let exp: i32 = exp.parse().expect("integer exponent");
        if (-4..9).contains(&exp) {
            let decimals = (8 - exp).max(0) as usize;
            let fixed = format!("{:.*}", decimals, x);
            f.write_str(trim_zeros(&fixed))
        } else {
            write!(f, "{}e{}", trim_zeros(mantissa), exp)
        }
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::Sig9;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(Sig9(0.0).to_string(), "0");
        assert_eq!(Sig9(2.0).to_string(), "2");
        assert_eq!(Sig9(1.0 / 3.0).to_string(), "0.333333333");
        assert_eq!(Sig9(-123456.789012).to_string(), "-123456.789");
        assert_eq!(Sig9(9.9999999999).to_string(), "10");
        assert_eq!(Sig9(1.5e-7).to_string(), "1.5e-7");
        assert_eq!(Sig9(7.292115e-5).to_string(), "7.292115e-5");
        assert_eq!(Sig9(1e-4).to_string(), "0.0001");
        assert_eq!(Sig9(1.23456789e12).to_string(), "1.23456789e12");
    }

    #[test]
    fn parses_back_close() {
        for x in [1.23456789012345, -2.718281828e-9, 6.02214076e23, 900.0] {
            let y: f64 = Sig9(x).to_string().parse().unwrap();
            assert!(((y - x) / x).abs() < 1e-8);
        }
    }
}
