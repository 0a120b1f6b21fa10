//! Independent reference implementations used as oracles by the
//! integration tests. Nothing here calls into the library's numerics.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

/// Eigen-decomposition of a symmetric `n x n` matrix (row-major) by cyclic
/// Jacobi rotations. Returns eigenvalues in descending order and the matching
/// unit eigenvectors.
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[y * n + y].total_cmp(&m[x * n + x]));
    let vals = order.iter().map(|&k| m[k * n + k]).collect();
    let vecs = order
        .iter()
        .map(|&k| (0..n).map(|i| v[i * n + k]).collect())
        .collect();
    (vals, vecs)
}

/// Sample covariance (divisor n-1) of row-major `rows`.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / n as f64;
        }
    }
    let mut c = vec![0.0; d * d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    c.iter_mut().for_each(|x| *x /= (n - 1) as f64);
    c
}

/// AP straight from the definition: mean over all positives of the
/// precision at the rank where each is retrieved (zero if never retrieved).
pub fn ap_by_definition(ranked: &[String], pos: &HashSet<String>, junk: &HashSet<String>) -> f64 {
    let kept: Vec<&String> = ranked.iter().filter(|id| !junk.contains(*id)).collect();
    let mut sum = 0.0;
    for p in pos {
        if let Some(r) = kept.iter().position(|id| *id == p) {
            let hits_up_to = kept[..=r].iter().filter(|id| pos.contains(**id)).count();
            sum += hits_up_to as f64 / (r + 1) as f64;
        }
    }
    sum / pos.len() as f64
}

/// Trapezoidal rule over the precision-recall curve, as in the reference
/// evaluation script of the landmark benchmarks.
pub fn ap_trapezoid(ranked: &[String], pos: &HashSet<String>, junk: &HashSet<String>) -> f64 {
    let mut ap = 0.0;
    let mut old_recall = 0.0;
    let mut old_precision = 1.0;
    let mut intersect = 0.0;
    let mut j = 0.0;
    for id in ranked {
        if junk.contains(id) {
            continue;
        }
        if pos.contains(id) {
            intersect += 1.0;
        }
        let recall = intersect / pos.len() as f64;
        let precision = intersect / (j + 1.0);
        ap += (recall - old_recall) * ((old_precision + precision) / 2.0);
        old_recall = recall;
        old_precision = precision;
        j += 1.0;
    }
    ap
}

/// Full-sort nearest neighbours: `(id, distance)` ascending by distance, ties
/// by id, excluding `exclude`, truncated to `k`.
pub fn naive_knn(
    db: &[(String, Vec<f64>)],
    q: &[f64],
    k: usize,
    exclude: &HashSet<String>,
) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = db
        .iter()
        .filter(|(id, _)| !exclude.contains(id))
        .map(|(id, v)| {
            let s: f64 = v.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            (id.clone(), s.sqrt())
        })
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Every non-adjacent pair (a < b) with at least one common neighbour,
/// checked by trying each third node.
pub fn brute_force_candidates(nodes: &[String], edges: &HashSet<(String, String)>) -> Vec<(String, String)> {
    let adj = |x: &String, y: &String| edges.contains(&(x.clone(), y.clone())) || edges.contains(&(y.clone(), x.clone()));
    let mut sorted = nodes.to_vec();
    sorted.sort();
    let mut out = Vec::new();
    for (i, a) in sorted.iter().enumerate() {
        for b in &sorted[i + 1..] {
            if adj(a, b) {
                continue;
            }
            if sorted.iter().any(|c| c != a && c != b && adj(a, c) && adj(c, b)) {
                out.push((a.clone(), b.clone()));
            }
        }
    }
    out
}

/// Greedy scan keeping pairs whose ids are both unused, up to `budget`.
pub fn reference_greedy(pairs: &[(String, String)], budget: usize) -> Vec<(String, String)> {
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    for (a, b) in pairs {
        if out.len() == budget {
            break;
        }
        if !used.contains(a) && !used.contains(b) {
            used.insert(a.clone());
            used.insert(b.clone());
            out.push((a.clone(), b.clone()));
        }
    }
    out
}

/// Hinge loss summed over pairs: positives pay for squared distance above
/// `tau_pos`, negatives for squared distance below `tau_neg`.
pub fn hinge_loss(
    w: &[f64],
    d_out: usize,
    rows: &[Vec<f64>],
    pairs: &[(usize, usize, bool)],
    tau_pos: f64,
    tau_neg: f64,
) -> f64 {
    let d_in = rows[0].len();
    let mut total = 0.0;
    for &(i, j, positive) in pairs {
        let mut s = 0.0;
        for k in 0..d_out {
            let mut p = 0.0;
            for c in 0..d_in {
                p += w[k * d_in + c] * (rows[i][c] - rows[j][c]);
            }
            s += p * p;
        }
        total += if positive {
            (s - tau_pos).max(0.0)
        } else {
            (tau_neg - s).max(0.0)
        };
    }
    total
}

/// Squared projected distance of one pair.
pub fn projected_sq(w: &[f64], d_out: usize, a: &[f64], b: &[f64]) -> f64 {
    let d_in = a.len();
    (0..d_out)
        .map(|k| {
            let p: f64 = (0..d_in).map(|c| w[k * d_in + c] * (a[c] - b[c])).sum();
            p * p
        })
        .sum()
}
