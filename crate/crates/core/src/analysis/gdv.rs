use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::AnalysisError;

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn sorted_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Scales each dimension to `0.5 * (x - mean) / std` with the population
/// std. Zero-variance dimensions are dropped. Returns the kept dimension
/// count.
pub(crate) fn zscore_half(points: &[&[f64]]) -> (Vec<Vec<f64>>, usize) {
    let n = points.len() as f64;
    let dim = points.first().map_or(0, |p| p.len());
    let mut keep = Vec::new();
    let mut stats = Vec::new();
    for d in 0..dim {
        let mean = points.iter().map(|p| p[d]).sum::<f64>() / n;
        let var = points.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / n;
        if var > 0.0 {
            keep.push(d);
            stats.push((mean, var.sqrt()));
        }
    }
    if keep.len() < dim {
        log::warn!(
            "gdv: dropped {} of {dim} zero-variance dimension(s)",
            dim - keep.len()
        );
    }
    let z = points
        .iter()
        .map(|p| {
            keep.iter()
                .zip(&stats)
                .map(|(&d, &(m, s))| 0.5 * (p[d] - m) / s)
                .collect()
        })
        .collect();
    (z, keep.len())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Sign-flipped generalized discrimination value; higher means the labels
/// are more separable.
///
/// Points are put in a canonical order before any arithmetic, so the value
/// is exactly invariant to row permutation and to renaming labels.
pub fn gdv<L: Ord + Copy>(points: &[Vec<f64>], labels: &[L]) -> Result<f64, AnalysisError> {
    if points.len() != labels.len() {
        return Err(AnalysisError::LengthMismatch {
            what: "gdv points vs labels",
            left: points.len(),
            right: labels.len(),
        });
    }
    let dim = points.first().map_or(0, |p| p.len());
    if dim == 0 {
        return Err(AnalysisError::NoDimensions);
    }
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(AnalysisError::LengthMismatch {
            what: "gdv point dimension",
            left: dim,
            right: p.len(),
        });
    }

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex(&points[a], &points[b]));
    let sorted: Vec<&[f64]> = order.iter().map(|&i| points[i].as_slice()).collect();
    let (z, kept) = zscore_half(&sorted);
    if kept == 0 {
        return Err(AnalysisError::NoDimensions);
    }

    // Classes ordered by their first point in canonical order.
    let mut by_label: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (pos, &i) in order.iter().enumerate() {
        by_label.entry(labels[i]).or_default().push(pos);
    }
    let mut classes: Vec<Vec<usize>> = by_label.into_values().collect();
    classes.sort_by_key(|c| c[0]);
    if classes.len() < 2 {
        return Err(AnalysisError::TooFewClasses(classes.len()));
    }
    if let Some(c) = classes.iter().find(|c| c.len() < 2) {
        return Err(AnalysisError::SingletonClass { index: order[c[0]] });
    }

    let intra: Vec<f64> = classes
        .iter()
        .map(|c| {
            let mut s = 0.0;
            for (a, &i) in c.iter().enumerate() {
                for &j in &c[a + 1..] {
                    s += dist(&z[i], &z[j]);
                }
            }
            let n = c.len() as f64;
            2.0 * s / (n * (n - 1.0))
        })
        .collect();
    let mut inter = Vec::new();
    for (a, ca) in classes.iter().enumerate() {
        for cb in &classes[a + 1..] {
            let mut s = 0.0;
            for &i in ca {
                for &j in cb {
                    s += dist(&z[i], &z[j]);
                }
            }
            inter.push(s / (ca.len() * cb.len()) as f64);
        }
    }
    let l = classes.len() as f64;
    let intra_mean = sorted_sum(intra) / l;
    let inter_mean = sorted_sum(inter) * 2.0 / (l * (l - 1.0));
    Ok(-(intra_mean - inter_mean) / (kept as f64).sqrt())
}
