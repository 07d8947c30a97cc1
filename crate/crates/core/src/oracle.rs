//! Slow, direct reference implementations used to check the fast paths.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("normal matrix is singular")]
    Singular,
    #[error("need at least two clusters")]
    TooFewClusters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleFit {
    pub coefficients: Vec<f64>,
    /// Row-major `k × k`.
    pub covariance: Vec<Vec<f64>>,
}

impl OracleFit {
    pub fn se(&self, j: usize) -> f64 {
        self.covariance[j][j].sqrt()
    }
}

/// Gauss–Jordan inverse with partial pivoting.
pub fn invert(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, OracleError> {
    let k = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..k).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    let scale = a.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs())).max(1e-300);
    for c in 0..k {
        let pivot = (c..k).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        if m[pivot][c].abs() <= 1e-13 * scale {
            return Err(OracleError::Singular);
        }
        m.swap(c, pivot);
        let d = m[c][c];
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for r in 0..k {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for j in 0..2 * k {
                        m[r][j] -= f * m[c][j];
                    }
                }
            }
        }
    }
    Ok(m.into_iter().map(|r| r[k..].to_vec()).collect())
}

/// Weighted least squares from explicit normal equations, with an HC1
/// (`clusters = None`) or CR1 sandwich built by summing score outer products.
///
/// `columns` is the full design, including any constant and dummy columns.
pub fn oracle_wls(
    columns: &[Vec<f64>],
    y: &[f64],
    w: &[f64],
    clusters: Option<&[usize]>,
) -> Result<OracleFit, OracleError> {
    let n = y.len();
    let k = columns.len();
    let mut xtwx = vec![vec![0.0; k]; k];
    let mut xtwy = vec![0.0; k];
    for i in 0..n {
        for a in 0..k {
            xtwy[a] += columns[a][i] * w[i] * y[i];
            for b in 0..k {
                xtwx[a][b] += columns[a][i] * w[i] * columns[b][i];
            }
        }
    }
    let inv = invert(&xtwx)?;
    let beta: Vec<f64> = (0..k).map(|a| (0..k).map(|b| inv[a][b] * xtwy[b]).sum()).collect();
    let resid: Vec<f64> = (0..n).map(|i| y[i] - (0..k).map(|a| columns[a][i] * beta[a]).sum::<f64>()).collect();

    let groups: Vec<usize> = match clusters {
        Some(c) => c.to_vec(),
        None => (0..n).collect(),
    };
    let mut labels = groups.clone();
    labels.sort_unstable();
    labels.dedup();
    if clusters.is_some() && labels.len() < 2 {
        return Err(OracleError::TooFewClusters);
    }
    let mut meat = vec![vec![0.0; k]; k];
    for &g in &labels {
        let mut score = vec![0.0; k];
        for i in (0..n).filter(|&i| groups[i] == g) {
            for a in 0..k {
                score[a] += columns[a][i] * w[i] * resid[i];
            }
        }
        for a in 0..k {
            for b in 0..k {
                meat[a][b] += score[a] * score[b];
            }
        }
    }
    let (nf, kf, gf) = (n as f64, k as f64, labels.len() as f64);
    let factor = match clusters {
        Some(_) => gf / (gf - 1.0) * (nf - 1.0) / (nf - kf),
        None => nf / (nf - kf),
    };
    let mut cov = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in 0..k {
            let mut s = 0.0;
            for c in 0..k {
                for d in 0..k {
                    s += inv[a][c] * meat[c][d] * inv[d][b];
                }
            }
            cov[a][b] = factor * s;
        }
    }
    Ok(OracleFit { coefficients: beta, covariance: cov })
}

/// Exhaustive best split over every feature and midpoint threshold.
///
/// Returns `(feature, threshold, children SSE)`; ties keep the earlier
/// feature, then the lower threshold.
pub fn oracle_best_split(columns: &[Vec<f64>], y: &[f64], min_leaf: usize) -> Option<(usize, f64, f64)> {
    let sse = |idx: &[usize]| {
        let m = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
        idx.iter().map(|&i| (y[i] - m).powi(2)).sum::<f64>()
    };
    let mut best: Option<(usize, f64, f64)> = None;
    for (f, col) in columns.iter().enumerate() {
        let mut values = col.clone();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for pair in values.windows(2) {
            let t = 0.5 * (pair[0] + pair[1]);
            let left: Vec<usize> = (0..y.len()).filter(|&i| col[i] <= t).collect();
            let right: Vec<usize> = (0..y.len()).filter(|&i| col[i] > t).collect();
            if left.len() < min_leaf || right.len() < min_leaf {
                continue;
            }
            let total = sse(&left) + sse(&right);
            if best.is_none_or(|(_, _, b)| total < b - 1e-12 * b.abs().max(1.0)) {
                best = Some((f, t, total));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_2x2() {
        let inv = invert(&[vec![4.0, 7.0], vec![2.0, 6.0]]).unwrap();
        assert!((inv[0][0] - 0.6).abs() < 1e-12 && (inv[0][1] + 0.7).abs() < 1e-12);
        assert!(invert(&[vec![1.0, 2.0], vec![2.0, 4.0]]).is_err());
    }

    #[test]
    fn intercept_only_weighted_mean() {
        let y = [1.0, 2.0, 4.0];
        let w = [1.0, 1.0, 2.0];
        let f = oracle_wls(&[vec![1.0; 3]], &y, &w, None).unwrap();
        assert!((f.coefficients[0] - 11.0 / 4.0).abs() < 1e-12);
    }
}
