//! Scalar metrics over pose sequences and score vectors.

use ndarray::ArrayView3;

use crate::error::{Error, Result};

/// Mean over frames of the Euclidean norm of the flattened per-frame
/// coordinate difference, averaged over sequences.
pub fn l2_metric(generated: &[ArrayView3<'_, f32>], truth: &[ArrayView3<'_, f32>]) -> Result<f64> {
    if generated.len() != truth.len() {
        return Err(Error::Argument(format!(
            "{} generated sequences for {} references",
            generated.len(),
            truth.len()
        )));
    }
    if generated.is_empty() {
        return Err(Error::Argument("no sequences to compare".into()));
    }
    let mut total = 0.0;
    for (g, t) in generated.iter().zip(truth) {
        if g.dim() != t.dim() {
            return Err(Error::Argument(format!("shapes {:?} and {:?} differ", g.dim(), t.dim())));
        }
        if g.dim().0 == 0 {
            return Err(Error::Argument("empty sequence".into()));
        }
        let per_frame: f64 = g
            .outer_iter()
            .zip(t.outer_iter())
            .map(|(a, b)| {
                a.iter()
                    .zip(b.iter())
                    .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        total += per_frame / g.dim().0 as f64;
    }
    Ok(total / generated.len() as f64)
}

/// Area under the ROC curve by the rank-sum statistic, ties counted half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Argument("one label per score expected".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Argument("AUROC needs both positive and negative labels".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("scores contain NaN".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Tied block shares the average of ranks i+1 ..= j+1.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Argument("correlation needs two equal-length series of at least 2 values".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut c, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        c += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Argument("correlation with a constant series is undefined".into()));
    }
    Ok(c / (va * vb).sqrt())
}
