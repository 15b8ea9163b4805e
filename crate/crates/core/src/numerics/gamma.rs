use crate::error::{Error, Result};

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Gamma function for positive real arguments.
///
/// Small positive integers return the exact factorial so that `gamma(1.0)`
/// and `gamma(2.0)` are exactly one.
pub fn gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("gamma requires a finite positive argument, got {x}")));
    }
    if x.fract() == 0.0 && x <= 21.0 {
        let n = x as u64;
        return Ok((1..n).fold(1.0, |acc, k| acc * k as f64));
    }
    Ok(lanczos(x))
}

fn lanczos(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx)
        return std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * lanczos(1.0 - x));
    }
    let z = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    (2.0 * std::f64::consts::PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * acc
}
