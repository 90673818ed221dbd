//! Two-sample comparison statistics: Welch's t-test, the Shapiro–Wilk
//! normality test (Royston's approximation), MAD outlier filtering and the
//! relative standard deviation.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatsReport {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    /// Shapiro–Wilk p of the candidate sample, when it has 3 to 5000 values.
    pub normality_p: Option<f64>,
    pub rsd_percent: f64,
    pub n_removed_outliers: usize,
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("sample contains a non-finite value".into()))
    }
}

fn need(x: &[f64], n: usize) -> Result<()> {
    if x.len() < n {
        return Err(Error::InsufficientData {
            required: n,
            available: x.len(),
        });
    }
    check_finite(x)
}

/// Welch's unequal-variance t-test.
///
/// When both samples have zero variance the statistic is 0 with p = 1 for
/// equal means, and infinite with p = 0 otherwise; `df` is then `n_a + n_b - 2`.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    need(a, 2)?;
    need(b, 2)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    let se2 = va + vb;
    if se2 == 0.0 {
        let df = na + nb - 2.0;
        return Ok(if ma == mb {
            WelchResult { t: 0.0, df, p: 1.0 }
        } else {
            WelchResult {
                t: if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY },
                df,
                p: 0.0,
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(WelchResult {
        t,
        df,
        p: student_t_two_sided(t, df),
    })
}

/// P(|T| > |t|) for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    incomplete_beta(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

const BETA_EPS: f64 = 1e-12;
const BETA_TINY: f64 = 1e-300;
const BETA_MAX_ITER: usize = 10_000;

/// Regularized incomplete beta I_x(a, b), evaluated with the modified Lentz
/// continued fraction on whichever side of the mean converges fastest.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
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
    let clamp = |v: f64| if v.abs() < BETA_TINY { BETA_TINY } else { v };
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 / clamp(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=BETA_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < BETA_EPS {
            break;
        }
    }
    h
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Shapiro–Wilk W and p-value for 3 to 5000 observations.
pub fn shapiro_wilk(x: &[f64]) -> Result<(f64, f64)> {
    need(x, 3)?;
    let n = x.len();
    if n > 5000 {
        return Err(Error::InvalidInput(format!("Shapiro–Wilk supports at most 5000 values, got {n}")));
    }
    let mut xs = x.to_vec();
    xs.sort_by(f64::total_cmp);
    let range = xs[n - 1] - xs[0];
    if range == 0.0 {
        return Err(Error::InvalidInput("Shapiro–Wilk is undefined for constant data".into()));
    }

    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let nn = n as f64;
    let half = n / 2;
    // Coefficients for the lower half; the upper half mirrors them.
    let mut a = vec![0.0; half];
    if n == 3 {
        a[0] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
        const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
        let m: Vec<f64> = (1..=half)
            .map(|i| std_normal.inverse_cdf((i as f64 - 0.375) / (nn + 0.25)))
            .collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / nn.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (first, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
            a[1] = a2;
            (2, fac)
        } else {
            let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
            (1, fac)
        };
        a[0] = a1;
        for i in first..half {
            a[i] = -m[i] / fac;
        }
    }

    let mu = mean(&xs);
    let ssq: f64 = xs.iter().map(|v| (v - mu) * (v - mu)).sum();
    let num: f64 = (0..half).map(|i| a[i] * (xs[n - 1 - i] - xs[i])).sum();
    let w = (num * num / ssq).min(1.0);

    if n == 3 {
        let p = 6.0 / std::f64::consts::PI * (w.sqrt().asin() - std::f64::consts::FRAC_PI_3);
        return Ok((w, p.max(0.0)));
    }
    let y = (1.0 - w).ln();
    let (z, m, s) = if n <= 11 {
        let gamma = poly(&[-2.273, 0.459], nn);
        if y >= gamma {
            return Ok((w, 1e-99));
        }
        let m = poly(&[0.544, -0.39978, 0.025054, -6.714e-4], nn);
        let s = poly(&[1.3822, -0.77857, 0.062767, -0.0020322], nn).exp();
        (-(gamma - y).ln(), m, s)
    } else {
        let ln_n = nn.ln();
        let m = poly(&[-1.5861, -0.31082, -0.083751, 0.0038915], ln_n);
        let s = poly(&[-0.4803, -0.082676, 0.0030302], ln_n).exp();
        (y, m, s)
    };
    let p = 1.0 - std_normal.cdf((z - m) / s);
    Ok((w, p))
}

fn median_sorted(s: &[f64]) -> f64 {
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    median_sorted(&s)
}

/// Drops values farther than `k * scale * MAD` from the median, keeping the
/// original order. Nothing is removed when the MAD is zero.
pub fn mad_filter(x: &[f64], k: f64, scale: f64) -> (Vec<f64>, usize) {
    if x.is_empty() {
        return (Vec::new(), 0);
    }
    let med = median(x);
    let dev: Vec<f64> = x.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&dev);
    if mad == 0.0 {
        return (x.to_vec(), 0);
    }
    let bound = k * scale * mad;
    let kept: Vec<f64> = x.iter().zip(&dev).filter(|(_, &d)| d <= bound).map(|(&v, _)| v).collect();
    let removed = x.len() - kept.len();
    (kept, removed)
}

/// Relative standard deviation in percent.
pub fn rsd(x: &[f64]) -> Result<f64> {
    need(x, 2)?;
    let m = mean(x);
    if m == 0.0 {
        return Err(Error::InvalidInput("relative standard deviation of a zero-mean sample".into()));
    }
    Ok(100.0 * variance(x).sqrt() / m.abs())
}

/// Compares `candidate` against `baseline`, optionally after MAD filtering
/// both samples.
pub fn compare(baseline: &[f64], candidate: &[f64], mad: Option<(f64, f64)>) -> Result<StatsReport> {
    let (base, cand, removed) = match mad {
        Some((k, scale)) => {
            let (b, rb) = mad_filter(baseline, k, scale);
            let (c, rc) = mad_filter(candidate, k, scale);
            (b, c, rb + rc)
        }
        None => (baseline.to_vec(), candidate.to_vec(), 0),
    };
    let w = welch_t(&cand, &base)?;
    let normality_p = if cand.len() >= 3 { shapiro_wilk(&cand).ok().map(|r| r.1) } else { None };
    let rsd_percent = if mean(&cand) == 0.0 { 0.0 } else { rsd(&cand)? };
    Ok(StatsReport {
        t: w.t,
        df: w.df,
        p: w.p,
        normality_p,
        rsd_percent,
        n_removed_outliers: removed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_give_zero_t() {
        let a = [1.0, 2.0, 3.5, 4.0];
        let r = welch_t(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn antisymmetry_is_exact() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.5, 3.5, 4.5, 6.0, 7.5, 9.0];
        assert_eq!(welch_t(&a, &b).unwrap().t, -welch_t(&b, &a).unwrap().t);
    }

    #[test]
    fn degenerate_samples() {
        assert!(matches!(welch_t(&[1.0], &[1.0, 2.0]), Err(Error::InsufficientData { .. })));
        let r = welch_t(&[3.0, 3.0], &[3.0, 3.0, 3.0]).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        let r = welch_t(&[3.0, 3.0], &[4.0, 4.0]).unwrap();
        assert_eq!(r.p, 0.0);
        assert!(r.t < 0.0);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x and I_x(a, 1) = x^a.
        for x in [0.1, 0.37, 0.5, 0.93] {
            assert!((incomplete_beta(1.0, 1.0, x) - x).abs() < 1e-13);
            assert!((incomplete_beta(3.0, 1.0, x) - x.powi(3)).abs() < 1e-13);
        }
        // t with one degree of freedom is Cauchy: P(|T| > 1) = 1/2.
        assert!((student_t_two_sided(1.0, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn shapiro_wilk_rejects_small_samples() {
        assert!(shapiro_wilk(&[1.0, 2.0]).is_err());
        assert!(shapiro_wilk(&[2.0, 2.0, 2.0]).is_err());
    }

    #[test]
    fn mad_examples() {
        let x: Vec<f64> = (1..=9).map(f64::from).chain([100.0]).collect();
        let (kept, removed) = mad_filter(&x, 3.0, 1.0);
        assert_eq!(removed, 1);
        assert_eq!(kept, (1..=9).map(f64::from).collect::<Vec<_>>());
        let (kept, removed) = mad_filter(&[4.0; 6], 3.0, 1.0);
        assert_eq!((kept.len(), removed), (6, 0));
    }

    #[test]
    fn rsd_examples() {
        assert_eq!(rsd(&[1.0, 2.0, 3.0]).unwrap(), 50.0);
        assert_eq!(rsd(&[7.0, 7.0]).unwrap(), 0.0);
        assert!(rsd(&[-1.0, 1.0]).is_err());
    }
}
