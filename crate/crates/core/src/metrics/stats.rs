//! Welch's unequal-variance t-test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub dof: f64,
    pub p_two_sided: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided Welch test. When both samples have zero variance, equal means
/// give `t = 0, p = 1` and different means give `t = ±inf, p = 0`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Shape(format!(
            "t-test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let dof = (a.len() + b.len() - 2) as f64;
        return Ok(if ma == mb {
            WelchResult {
                t: 0.0,
                dof,
                p_two_sided: 1.0,
            }
        } else {
            WelchResult {
                t: if ma > mb {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                },
                dof,
                p_two_sided: 0.0,
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    Ok(WelchResult {
        t,
        dof,
        p_two_sided: student_t_two_sided(t, dof),
    })
}

/// `P(|T| >= |t|)` for Student's t with `dof` degrees of freedom.
pub fn student_t_two_sided(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    reg_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t)).clamp(0.0, 1.0)
}

/// Regularized incomplete beta `I_x(a, b)` by continued fraction.
pub fn reg_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
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
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `1 − 2∫₀^|t| f(x) dx` by composite Simpson, with the density constant given.
    fn simpson_p(t: f64, dof: f64, constant: f64) -> f64 {
        let n = 20_000;
        let h = t.abs() / n as f64;
        let f = |x: f64| constant * (1.0 + x * x / dof).powf(-(dof + 1.0) / 2.0);
        let mut s = f(0.0) + f(t.abs());
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        1.0 - 2.0 * s * h / 3.0
    }

    #[test]
    fn ln_gamma_reference_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn textbook_example_matches_integration() {
        let r = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!((r.t + 1.0).abs() < 1e-12);
        assert!((r.dof - 8.0).abs() < 1e-12);
        // Γ(4.5) / (√(8π) Γ(4)) with Γ(4.5) = 3.5·2.5·1.5·0.5·√π and Γ(4) = 6
        let pi = std::f64::consts::PI;
        let c = 3.5 * 2.5 * 1.5 * 0.5 * pi.sqrt() / ((8.0 * pi).sqrt() * 6.0);
        let oracle = simpson_p(-1.0, 8.0, c);
        assert!(
            (r.p_two_sided - oracle).abs() < 1e-9,
            "{} vs {oracle}",
            r.p_two_sided
        );
        assert!((r.p_two_sided - 0.3466).abs() < 1e-4);
    }

    #[test]
    fn odd_dof_matches_integration() {
        // Γ(2) / (√(3π) Γ(1.5)) with Γ(1.5) = √π / 2
        let pi = std::f64::consts::PI;
        let c = 1.0 / ((3.0 * pi).sqrt() * pi.sqrt() / 2.0);
        let oracle = simpson_p(2.5, 3.0, c);
        assert!((student_t_two_sided(2.5, 3.0) - oracle).abs() < 1e-9);
    }

    #[test]
    fn null_and_separated_cases() {
        let a = [0.3, 0.5, 0.9, 0.1];
        let same = welch_t_test(&a, &a).unwrap();
        assert_eq!((same.t, same.p_two_sided), (0.0, 1.0));
        let far = welch_t_test(&[0.0, 0.01], &[10.0, 10.01]).unwrap();
        assert!(far.p_two_sided < 1e-6, "{}", far.p_two_sided);
        let flat = welch_t_test(&[1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(flat.p_two_sided, 1.0);
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn swap_antisymmetry() {
        let a = [0.2, 0.4, 0.35, 0.8, 0.1];
        let b = [0.5, 0.6, 0.9];
        let ab = welch_t_test(&a, &b).unwrap();
        let ba = welch_t_test(&b, &a).unwrap();
        assert!((ab.t + ba.t).abs() <= 1e-12);
        assert_eq!(ab.p_two_sided, ba.p_two_sided);
        assert_eq!(ab.dof, ba.dof);
    }
}
