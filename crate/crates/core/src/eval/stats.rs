//! One-way ANOVA with F-distribution p-values.

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Lanczos approximation (g = 7, nine terms), accurate to ~1e-15 for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
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
    let mut sum = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        sum += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + sum.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
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

/// Regularized incomplete beta `I_x(a, b)` for `a, b > 0` and `x` in [0, 1].
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // The fraction converges fast only on this side of the mean; use symmetry otherwise.
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Survival function `P(F > f)` of the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}

/// Size, mean and sample standard deviation of one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl GroupSummary {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 { 0.0 } else { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
        Self { n, mean, sd }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f_statistic: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p_value: f64,
}

/// One-way ANOVA from group summaries.
///
/// When every observation equals its group mean and the means differ, F is
/// unbounded and [`EvalError::InfiniteF`] is returned. When additionally the
/// means agree, the result is `F = 0, p = 1`.
pub fn anova_oneway(groups: &[GroupSummary]) -> Result<AnovaResult, EvalError> {
    if groups.len() < 2 {
        return Err(EvalError::InvalidInput(format!("ANOVA needs at least 2 groups, got {}", groups.len())));
    }
    if let Some(g) = groups.iter().find(|g| g.n < 1 || !g.mean.is_finite() || !(g.sd >= 0.0)) {
        return Err(EvalError::InvalidInput(format!("invalid group summary {g:?}")));
    }
    let total: usize = groups.iter().map(|g| g.n).sum();
    let k = groups.len();
    if total <= k {
        return Err(EvalError::InvalidInput(format!("ANOVA needs more observations ({total}) than groups ({k})")));
    }
    let grand = groups.iter().map(|g| g.n as f64 * g.mean).sum::<f64>() / total as f64;
    let ss_between: f64 = groups.iter().map(|g| g.n as f64 * (g.mean - grand).powi(2)).sum();
    let ss_within: f64 = groups.iter().map(|g| (g.n as f64 - 1.0) * g.sd * g.sd).sum();
    let (df_between, df_within) = (k - 1, total - k);
    let ms_between = ss_between / df_between as f64;
    let ms_within = ss_within / df_within as f64;
    // Relative guard so rounding noise in equal means does not read as signal.
    let scale = groups.iter().map(|g| g.mean.abs()).fold(1.0, f64::max);
    let between_is_zero = ms_between <= (1e-12 * scale).powi(2);
    if ms_within == 0.0 {
        if between_is_zero {
            return Ok(AnovaResult { f_statistic: 0.0, df_between, df_within, p_value: 1.0 });
        }
        return Err(EvalError::InfiniteF);
    }
    let f = if between_is_zero { 0.0 } else { ms_between / ms_within };
    let p = f_survival(f, df_between as f64, df_within as f64);
    Ok(AnovaResult { f_statistic: f, df_between, df_within, p_value: p })
}

/// One-way ANOVA from raw observations.
pub fn anova_from_samples(groups: &[Vec<f64>]) -> Result<AnovaResult, EvalError> {
    if groups.iter().any(Vec::is_empty) {
        return Err(EvalError::InvalidInput("ANOVA group without observations".into()));
    }
    let summaries: Vec<GroupSummary> = groups.iter().map(|g| GroupSummary::from_samples(g)).collect();
    anova_oneway(&summaries)
}
