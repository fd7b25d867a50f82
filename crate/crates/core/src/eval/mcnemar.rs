use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::EvalError;

/// Below this many discordant pairs the exact binomial test is used.
pub const EXACT_BELOW: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McNemarMethod {
    Exact,
    ChiSquareCorrected,
    NoDiscordantPairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    /// A right, B wrong.
    pub b: usize,
    /// A wrong, B right.
    pub c: usize,
    pub statistic: Option<f64>,
    pub p_value: f64,
    pub method: McNemarMethod,
}

/// Two-sided exact binomial p-value for `k` successes of `n` at p = 1/2:
/// `min(1, 2 * P[X <= min(k, n - k)])`.
pub fn exact_two_sided(k: usize, n: usize) -> f64 {
    let m = k.min(n - k);
    let mut term = 0.5f64.powi(n as i32);
    let mut tail = 0.0;
    for i in 0..=m {
        tail += term;
        term *= (n - i) as f64 / (i + 1) as f64;
    }
    (2.0 * tail).min(1.0)
}

/// McNemar's test on paired correctness vectors.
pub fn mcnemar(a: &[bool], b: &[bool]) -> Result<McNemar, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    let (mut nb, mut nc) = (0, 0);
    for (x, y) in a.iter().zip(b) {
        match (x, y) {
            (true, false) => nb += 1,
            (false, true) => nc += 1,
            _ => {}
        }
    }
    Ok(from_discordant(nb, nc))
}

pub fn from_discordant(b: usize, c: usize) -> McNemar {
    let n = b + c;
    if n == 0 {
        return McNemar {
            b,
            c,
            statistic: None,
            p_value: 1.0,
            method: McNemarMethod::NoDiscordantPairs,
        };
    }
    if n < EXACT_BELOW {
        return McNemar {
            b,
            c,
            statistic: None,
            p_value: exact_two_sided(b, n),
            method: McNemarMethod::Exact,
        };
    }
    let d = (b as f64 - c as f64).abs() - 1.0;
    let stat = d * d / n as f64;
    let chi = ChiSquared::new(1.0).expect("one degree of freedom");
    McNemar {
        b,
        c,
        statistic: Some(stat),
        p_value: chi.sf(stat),
        method: McNemarMethod::ChiSquareCorrected,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_b10_c0() {
        let m = from_discordant(10, 0);
        assert_eq!(m.method, McNemarMethod::Exact);
        assert!((m.p_value - 2.0 * 0.5f64.powi(10)).abs() < 1e-15);
        assert!((m.p_value - 0.001953).abs() < 1e-6);
    }

    #[test]
    fn chi_square_b40_c10() {
        let m = from_discordant(40, 10);
        assert_eq!(m.method, McNemarMethod::ChiSquareCorrected);
        assert!((m.statistic.unwrap() - 16.82).abs() < 1e-12);
        assert!((m.p_value - 4.1e-5).abs() < 0.1e-5, "{}", m.p_value);
    }

    #[test]
    fn ties_are_not_significant() {
        for k in 0..13 {
            assert!(from_discordant(k, k).p_value >= 0.5);
        }
        assert_eq!(from_discordant(0, 0).p_value, 1.0);
    }

    #[test]
    fn symmetric_and_length_checked() {
        let a = [true, true, false, true, false];
        let b = [false, true, true, false, false];
        assert_eq!(mcnemar(&a, &b).unwrap().p_value, mcnemar(&b, &a).unwrap().p_value);
        assert!(matches!(mcnemar(&a, &b[..3]), Err(EvalError::LengthMismatch(5, 3))));
    }
}
