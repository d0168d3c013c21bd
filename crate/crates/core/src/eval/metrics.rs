use crate::error::{Error, Result};
use crate::numcore::{argmax, Matrix};

/// Percentage of rows whose top-scoring column is the true label; ties go
/// to the lowest column.
pub fn top1_accuracy(scores: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(scores, labels)?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = (0..scores.rows())
        .filter(|&i| argmax(scores.row(i)) == labels[i])
        .count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

fn check_labels(scores: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != scores.rows() {
        return Err(Error::shape("labels", scores.shape(), (labels.len(), 1)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= scores.cols()) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {} candidate classes",
            scores.cols()
        )));
    }
    Ok(())
}

/// Item indices sorted by descending score, ties by ascending index.
pub fn ranking(column: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..column.len()).collect();
    idx.sort_by(|&a, &b| column[b].total_cmp(&column[a]).then(a.cmp(&b)));
    idx
}

/// Average of precision at the rank of every relevant item, as a fraction.
/// `None` when nothing is relevant.
pub fn average_precision(column: &[f64], relevant: &[bool]) -> Option<f64> {
    let total = relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return None;
    }
    let mut found = 0usize;
    let mut acc = 0.0;
    for (k, i) in ranking(column).into_iter().enumerate() {
        if relevant[i] {
            found += 1;
            acc += found as f64 / (k + 1) as f64;
        }
    }
    Some(acc / total as f64)
}

/// Class-as-query retrieval summary.
#[derive(Clone, Debug, PartialEq)]
pub struct MapSummary {
    /// Mean AP over scored classes, as a percentage.
    pub map: f64,
    /// `(column, AP percentage)` for every class with a relevant image.
    pub per_class: Vec<(usize, f64)>,
    /// Columns without any relevant image; left out of the mean.
    pub skipped: Vec<usize>,
}

/// Ranks all images by each column of `scores`; an image is relevant to a
/// column when its label equals that column.
pub fn mean_average_precision(scores: &Matrix, labels: &[usize]) -> Result<MapSummary> {
    check_labels(scores, labels)?;
    let mut per_class = Vec::new();
    let mut skipped = Vec::new();
    for c in 0..scores.cols() {
        let rel: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        match average_precision(&scores.column(c), &rel) {
            Some(ap) => per_class.push((c, 100.0 * ap)),
            None => skipped.push(c),
        }
    }
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|(_, ap)| ap).sum::<f64>() / per_class.len() as f64
    };
    Ok(MapSummary {
        map,
        per_class,
        skipped,
    })
}

/// `(recall, precision)` after each rank cut `k = 1..n`.
pub fn precision_recall_curve(column: &[f64], relevant: &[bool]) -> Vec<(f64, f64)> {
    let total = relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return Vec::new();
    }
    let mut found = 0usize;
    ranking(column)
        .into_iter()
        .enumerate()
        .map(|(k, i)| {
            if relevant[i] {
                found += 1;
            }
            (found as f64 / total as f64, found as f64 / (k + 1) as f64)
        })
        .collect()
}

/// Macro average over curves of the interpolated precision (best precision
/// at recall ≥ r) at r = 0, 0.1, ..., 1.
pub fn interpolated_pr(curves: &[Vec<(f64, f64)>]) -> Vec<(f64, f64)> {
    let curves: Vec<&Vec<(f64, f64)>> = curves.iter().filter(|c| !c.is_empty()).collect();
    (0..=10)
        .map(|k| {
            let r = k as f64 / 10.0;
            let p = if curves.is_empty() {
                0.0
            } else {
                curves
                    .iter()
                    .map(|c| {
                        c.iter()
                            .filter(|(rec, _)| *rec >= r - 1e-12)
                            .map(|&(_, p)| p)
                            .fold(0.0, f64::max)
                    })
                    .sum::<f64>()
                    / curves.len() as f64
            };
            (r, p)
        })
        .collect()
}
