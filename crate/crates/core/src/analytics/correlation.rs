use crate::error::AnalysisError;

use super::components::{discovery_time, NewAddressComponent};

#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    /// (size, discovery time) per component.
    pub pairs: Vec<(usize, u64)>,
    pub coefficient: f64,
}

/// 1-based ranks, ties sharing their average rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|a, b| xs[*a].total_cmp(&xs[*b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation. Zero when either variable has no spread.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

pub fn size_vs_discovery_correlation(components: &[NewAddressComponent]) -> Result<Correlation, AnalysisError> {
    if components.len() < 2 {
        return Err(AnalysisError::TooFew {
            needed: 2,
            got: components.len(),
        });
    }
    let pairs: Vec<(usize, u64)> = components.iter().map(|c| (c.size(), discovery_time(c))).collect();
    let sizes: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
    let times: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
    Ok(Correlation {
        coefficient: spearman(&sizes, &times),
        pairs,
    })
}
