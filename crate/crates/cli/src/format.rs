//! Text form of reals in record and summary files.

/// Twelve significant digits, fixed notation for moderate exponents and
/// scientific otherwise, trailing zeros trimmed. Negative zero prints as `0`.
pub fn real(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        trim(format!("{:.*}", (11 - exp) as usize, x))
    } else {
        format!("{}e{exp}", trim(mantissa.to_string()))
    }
}

fn trim(mut s: String) -> String {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(real(0.0), "0");
        assert_eq!(real(-0.0), "0");
        assert_eq!(real(0.5), "0.5");
        assert_eq!(real(0.03125), "0.03125");
        assert_eq!(real(-1.6094379124341003), "-1.60943791243");
        assert_eq!(real(1.0), "1");
        assert_eq!(real(250.0), "250");
        assert_eq!(real(1.5e-7), "1.5e-7");
        assert_eq!(real(2.0e15), "2e15");
        assert_eq!(real(0.995), "0.995");
    }

    #[test]
    fn twelve_digits_survive_a_round_trip() {
        let mut x = 0.123456789012345_f64;
        for _ in 0..200 {
            let back: f64 = real(x).parse().unwrap();
            assert!((back - x).abs() <= 5e-12 * x.abs(), "{x} -> {}", real(x));
            x *= -1.7;
        }
    }
}
