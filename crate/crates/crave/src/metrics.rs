//! Evaluation statistics: rank correlations, quartic scatter fitting and
//! fold-partition utilities for cross-validation.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("inputs must have equal length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("constant input: correlation undefined")]
    ConstantInput,
    #[error("all pairs tied: kendall tau undefined")]
    AllTied,
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("need at least {k} items for {k} folds, got {n}")]
    TooFewItems { n: usize, k: usize },
}

/// SRCC / PLCC / KRCC over one prediction set.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub srcc: f64,
    pub plcc: f64,
    pub krcc: f64,
    pub n: usize,
}

impl CorrelationReport {
    pub fn compute(pred: &[f64], target: &[f64]) -> Result<Self, MetricError> {
        Ok(CorrelationReport {
            srcc: srcc(pred, target)?,
            plcc: plcc(pred, target)?,
            krcc: krcc(pred, target)?,
            n: pred.len(),
        })
    }

    /// Structured text form, one `key<TAB>value` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "srcc\t{}", self.srcc);
        let _ = writeln!(s, "plcc\t{}", self.plcc);
        let _ = writeln!(s, "krcc\t{}", self.krcc);
        let _ = writeln!(s, "n\t{}", self.n);
        s
    }
}

/// Average ranks (1-based), ties get the mean rank of their group.
pub fn rank_average(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("non-finite value in ranking"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Mean of ranks i+1 ..= j+1.
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean;
        }
        i = j + 1;
    }
    ranks
}

fn check_pair(pred: &[f64], target: &[f64], min_n: usize) -> Result<(), MetricError> {
    if pred.len() != target.len() {
        return Err(MetricError::LengthMismatch(pred.len(), target.len()));
    }
    if pred.len() < min_n {
        return Err(MetricError::TooFewSamples { needed: min_n, got: pred.len() });
    }
    Ok(())
}

/// Pearson linear correlation coefficient.
pub fn plcc(pred: &[f64], target: &[f64]) -> Result<f64, MetricError> {
    check_pair(pred, target, 2)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = target.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vp = 0.0;
    let mut vt = 0.0;
    for (p, t) in pred.iter().zip(target) {
        let dp = p - mp;
        let dt = t - mt;
        cov += dp * dt;
        vp += dp * dp;
        vt += dt * dt;
    }
    if vp == 0.0 || vt == 0.0 {
        return Err(MetricError::ConstantInput);
    }
    Ok((cov / (vp.sqrt() * vt.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson over average-assigned ranks.
pub fn srcc(pred: &[f64], target: &[f64]) -> Result<f64, MetricError> {
    check_pair(pred, target, 2)?;
    plcc(&rank_average(pred), &rank_average(target))
}

/// Kendall tau-b with tie corrections:
/// `(C - D) / sqrt((C + D + T_pred)(C + D + T_target))` where `T_pred`
/// counts pairs tied only in `pred` and `T_target` pairs tied only in
/// `target`.
pub fn krcc(pred: &[f64], target: &[f64]) -> Result<f64, MetricError> {
    check_pair(pred, target, 2)?;
    let n = pred.len();
    let (mut c, mut d, mut tp, mut tt) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..n {
        for j in (i + 1)..n {
            let dp = pred[i] - pred[j];
            let dt = target[i] - target[j];
            if dp == 0.0 && dt == 0.0 {
                // Tied in both: contributes to neither correction term.
            } else if dp == 0.0 {
                tp += 1;
            } else if dt == 0.0 {
                tt += 1;
            } else if dp * dt > 0.0 {
                c += 1;
            } else {
                d += 1;
            }
        }
    }
    let denom_p = (c + d + tp) as f64;
    let denom_t = (c + d + tt) as f64;
    if denom_p == 0.0 || denom_t == 0.0 {
        return Err(MetricError::AllTied);
    }
    Ok((c as f64 - d as f64) / (denom_p * denom_t).sqrt())
}

/// Least-squares coefficients `c0..c4` of `y ≈ Σ ck x^k`, solved through
/// column-scaled normal equations.
pub fn poly4_fit(pred: &[f64], target: &[f64]) -> Result<[f64; 5], MetricError> {
    check_pair(pred, target, 5)?;
    let n = pred.len();
    // Design matrix columns x^0..x^4, each scaled to unit max-abs.
    let mut cols = vec![vec![0.0; n]; 5];
    let mut scales = [0.0f64; 5];
    for k in 0..5 {
        for (i, &x) in pred.iter().enumerate() {
            cols[k][i] = x.powi(k as i32);
        }
        let s = cols[k].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        scales[k] = if s > 0.0 { s } else { 1.0 };
        for v in &mut cols[k] {
            *v /= scales[k];
        }
    }
    // Normal equations A c = b on the scaled columns.
    let mut a = [[0.0f64; 5]; 5];
    let mut b = [0.0f64; 5];
    for r in 0..5 {
        for cidx in 0..5 {
            a[r][cidx] = cols[r].iter().zip(&cols[cidx]).map(|(x, y)| x * y).sum();
        }
        b[r] = cols[r].iter().zip(target).map(|(x, y)| x * y).sum();
    }
    let sol = solve5(a, b).ok_or(MetricError::RankDeficient)?;
    let mut out = [0.0f64; 5];
    for k in 0..5 {
        out[k] = sol[k] / scales[k];
    }
    Ok(out)
}

/// Gaussian elimination with partial pivoting on a 5x5 system.
fn solve5(mut a: [[f64; 5]; 5], mut b: [f64; 5]) -> Option<[f64; 5]> {
    for col in 0..5 {
        let pivot = (col..5)
            .max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in (col + 1)..5 {
            let f = a[r][col] / a[col][col];
            for c2 in col..5 {
                a[r][c2] -= f * a[col][c2];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 5];
    for col in (0..5).rev() {
        let mut acc = b[col];
        for c2 in (col + 1)..5 {
            acc -= a[col][c2] * x[c2];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

pub fn poly4_eval(coeffs: &[f64; 5], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Evenly spaced samples of the fitted curve across the data range,
/// for plotting.
pub fn poly4_curve(coeffs: &[f64; 5], xs: &[f64], samples: usize) -> Vec<(f64, f64)> {
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let step = if samples > 1 { (hi - lo) / (samples - 1) as f64 } else { 0.0 };
    (0..samples)
        .map(|i| {
            let x = lo + step * i as f64;
            (x, poly4_eval(coeffs, x))
        })
        .collect()
}

/// Scatter points plus fitted curve samples in one plain-text file.
pub fn write_plot_data(
    path: &Path,
    pred: &[f64],
    target: &[f64],
    coeffs: &[f64; 5],
    curve_samples: usize,
) -> std::io::Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "# scatter\tx=pred\ty=mos");
    for (x, y) in pred.iter().zip(target) {
        let _ = writeln!(s, "{x}\t{y}");
    }
    let _ = writeln!(s, "# curve\tx\tfitted");
    for (x, y) in poly4_curve(coeffs, pred, curve_samples) {
        let _ = writeln!(s, "{x}\t{y}");
    }
    std::fs::write(path, s)
}

/// Assignment of items to `k` folds.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub k: usize,
    /// Fold index per item, length = item count.
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn complement_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != fold).collect()
    }
}

/// Seeded shuffle then round-robin assignment; fold sizes differ by at most
/// one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan, MetricError> {
    if k == 0 || n < k {
        return Err(MetricError::TooFewItems { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle(&mut order, &mut rng);
    let mut assignments = vec![0usize; n];
    for (pos, item) in order.into_iter().enumerate() {
        assignments[item] = pos % k;
    }
    Ok(FoldPlan { k, assignments, seed })
}

/// Fisher-Yates with an explicit index draw so the result depends only on
/// the ChaCha stream, not on distribution implementation details.
fn shuffle(items: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::RngCore;
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}
