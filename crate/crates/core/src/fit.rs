//! Piecewise polynomial least squares over CPU-load segments.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    /// Inclusive lower and exclusive upper load bound; the last segment
    /// also includes its upper bound.
    pub range: (f64, f64),
    pub degree: usize,
    /// Highest power first.
    pub coefficients: Vec<f64>,
    pub sse: f64,
    pub points: usize,
}

impl Segment {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn leading(&self) -> f64 {
        self.coefficients[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseFit {
    pub breakpoints: Vec<f64>,
    pub segments: Vec<Segment>,
    /// `segments[i + 1].leading() / segments[i].leading()`.
    pub leading_ratios: Vec<f64>,
}

/// Ordinary least squares for a single polynomial, solved by SVD of the
/// Vandermonde matrix. Returns coefficients highest power first and the SSE.
pub fn polyfit(points: &[(f64, f64)], degree: usize) -> Result<(Vec<f64>, f64)> {
    let cols = degree + 1;
    if points.len() < cols {
        return Err(Error::InsufficientData {
            required: cols,
            available: points.len(),
        });
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidInput("non-finite point".into()));
    }
    let a = DMatrix::from_fn(points.len(), cols, |r, c| points[r].0.powi((degree - c) as i32));
    let b = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));
    let svd = a.clone().svd(true, true);
    let coef = svd
        .solve(&b, 1e-14 * svd.singular_values.max())
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let resid = &a * &coef - &b;
    Ok((coef.iter().copied().collect(), resid.norm_squared()))
}

pub fn sse(points: &[(f64, f64)], coefficients: &[f64]) -> f64 {
    points
        .iter()
        .map(|&(x, y)| {
            let fx = coefficients.iter().fold(0.0, |acc, &c| acc * x + c);
            (fx - y) * (fx - y)
        })
        .sum()
}

/// Splits `points` at `breakpoints` and fits each piece with `degree`.
/// Every segment needs more than `degree + 1` points.
pub fn fit_piecewise(points: &[(f64, f64)], breakpoints: &[f64], degree: usize) -> Result<PiecewiseFit> {
    if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("breakpoints must be strictly increasing".into()));
    }
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend_from_slice(breakpoints);
    edges.push(f64::INFINITY);
    let mut segments = Vec::with_capacity(edges.len() - 1);
    for (i, w) in edges.windows(2).enumerate() {
        let last = i == edges.len() - 2;
        let pts: Vec<(f64, f64)> = points
            .iter()
            .copied()
            .filter(|&(x, _)| x >= w[0] && (x < w[1] || (last && x <= w[1])))
            .collect();
        if pts.len() <= degree + 1 {
            return Err(Error::UnderdeterminedSegment {
                segment: i,
                points: pts.len(),
                needed: degree + 1,
            });
        }
        let (coefficients, sse) = polyfit(&pts, degree)?;
        segments.push(Segment {
            range: (w[0], w[1]),
            degree,
            coefficients,
            sse,
            points: pts.len(),
        });
    }
    let leading_ratios = segments.windows(2).map(|w| w[1].leading() / w[0].leading()).collect();
    Ok(PiecewiseFit {
        breakpoints: breakpoints.to_vec(),
        segments,
        leading_ratios,
    })
}

fn format_poly(coefficients: &[f64]) -> String {
    let d = coefficients.len() - 1;
    let mut out = String::from("y =");
    for (i, &c) in coefficients.iter().enumerate() {
        let p = d - i;
        let sign = if c < 0.0 { '-' } else { '+' };
        if i == 0 {
            if c < 0.0 {
                out.push_str(" -");
            }
        } else {
            let _ = write!(out, " {sign}");
        }
        let _ = write!(out, " {:.6e}", c.abs());
        match p {
            0 => {}
            1 => out.push('x'),
            _ => {
                let _ = write!(out, "x^{p}");
            }
        }
    }
    out
}

/// Plain-text report: one equation per load segment and the growth ratio of
/// each segment's leading coefficient over the previous one.
pub fn report(fit: &PiecewiseFit) -> String {
    let mut out = String::new();
    let bound = |v: f64, lo: bool| {
        if v.is_infinite() {
            if lo { "0".to_string() } else { "100".to_string() }
        } else {
            format!("{v}")
        }
    };
    for s in &fit.segments {
        let _ = writeln!(
            out,
            "{:>3}-{:<3}% (n={:>3}, sse={:.4e}): {}",
            bound(s.range.0, true),
            bound(s.range.1, false),
            s.points,
            s.sse,
            format_poly(&s.coefficients)
        );
    }
    for (i, r) in fit.leading_ratios.iter().enumerate() {
        let _ = writeln!(out, "segment {} / segment {}: leading coefficient ratio {:.3}x", i + 1, i, r);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let pts: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        let (c, e) = polyfit(&pts, 1).unwrap();
        assert!((c[0] - 2.0).abs() < 1e-9 && (c[1] - 1.0).abs() < 1e-9, "{c:?}");
        assert!(e < 1e-18);
    }

    #[test]
    fn underdetermined_segment_is_named() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 * 10.0, 1.0)).collect();
        match fit_piecewise(&pts, &[85.0], 1) {
            Err(Error::UnderdeterminedSegment { segment: 1, points: 1, needed: 2 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn report_lists_every_segment() {
        let pts: Vec<(f64, f64)> = (0..100).map(|i| (i as f64, if i < 50 { i as f64 } else { 3.0 * i as f64 - 100.0 })).collect();
        let f = fit_piecewise(&pts, &[50.0], 1).unwrap();
        let text = report(&f);
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("ratio 3.000x"), "{text}");
    }
}
