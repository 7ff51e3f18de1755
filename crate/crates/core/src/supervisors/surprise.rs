//! Surprise adequacy over the last hidden layer: likelihood-based (LSA),
//! Mahalanobis (MDSA) and distance-ratio (DSA) variants.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::{cholesky, cholesky_log_det, covariance, forward_substitute, matmul_nt};
use crate::rng::SeededRng;
use crate::{Error, Result, Tensor};

/// LSA drops activation dimensions whose class-pool variance is at most this.
pub const LSA_VARIANCE_FLOOR: f64 = 1e-5;
/// Relative ridge added to covariance matrices (times their mean variance).
pub const COVARIANCE_RIDGE: f64 = 1e-6;
/// Share of the training activations DSA keeps.
pub const DSA_POOL_FRACTION: f64 = 0.3;

const QUERY_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurpriseVariant {
    Lsa,
    Mdsa,
    Dsa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsaClass {
    /// Retained activation dimensions.
    pub dims: Vec<usize>,
    /// Cholesky factor of the kernel bandwidth matrix.
    pub chol: Vec<f64>,
    /// Pool points whitened by `chol`, `[n × dims]`.
    pub whitened: Tensor,
    /// `ln n + ½ (d ln 2π + ln det H)`.
    pub log_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdsaClass {
    pub mean: Vec<f64>,
    /// Cholesky factor of the regularized covariance.
    pub chol: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsaPool {
    /// Retained activations `[m × d]`.
    pub points: Tensor,
    pub classes: Vec<usize>,
    /// Distance from each retained point to its nearest other-class point.
    pub nearest_other: Vec<f64>,
}

/// A fit error message per class that could not be fitted.
pub type ClassFit<T> = core::result::Result<T, alloc::string::String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SurpriseFitState {
    Lsa(Vec<ClassFit<LsaClass>>),
    Mdsa(Vec<ClassFit<MdsaClass>>),
    Dsa(DsaPool),
}

fn pools(acts: &Tensor, classes: &[usize], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    if acts.rows() != classes.len() {
        return Err(Error::dim("fit_surprise", &[classes.len()], &[acts.rows()]));
    }
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &c) in classes.iter().enumerate() {
        if c >= num_classes {
            return Err(Error::config(format!("class {c} out of range")));
        }
        by_class[c].push(i);
    }
    Ok(by_class)
}

fn cholesky_ridged(cov: &mut [f64], d: usize, always: bool) -> Result<Vec<f64>> {
    if !always {
        if let Ok(l) = cholesky(cov, d) {
            return Ok(l);
        }
    }
    let mean_var = (0..d).map(|i| cov[i * d + i]).sum::<f64>() / d as f64;
    let ridge = COVARIANCE_RIDGE * if mean_var > 0.0 { mean_var } else { 1.0 };
    for i in 0..d {
        cov[i * d + i] += ridge;
    }
    cholesky(cov, d)
}

fn fit_lsa(acts: &Tensor, idx: &[usize]) -> ClassFit<LsaClass> {
    let n = idx.len();
    if n < 2 {
        return Err(format!("pool has {n} activation(s), need at least 2"));
    }
    let d = acts.row_len();
    let pool = acts.select_rows(idx);
    let (_, full_cov) = covariance(pool.data(), n, d);
    let dims: Vec<usize> = (0..d).filter(|&k| full_cov[k * d + k] > LSA_VARIANCE_FLOOR).collect();
    let k = dims.len();
    if k == 0 {
        return Err("no activation dimension has variance above the floor".into());
    }
    // Scott's rule: bandwidth matrix = covariance · n^(−2/(k+4))
    let factor = libm::pow(n as f64, -2.0 / (k as f64 + 4.0));
    let mut h: Vec<f64> = dims
        .iter()
        .flat_map(|&a| dims.iter().map(move |&b| (a, b)))
        .map(|(a, b)| full_cov[a * d + b] * factor)
        .collect();
    let chol = cholesky_ridged(&mut h, k, false).map_err(|e| format!("{e}"))?;
    let mut whitened = Vec::with_capacity(n * k);
    for row in pool.iter_rows() {
        let mut v: Vec<f64> = dims.iter().map(|&a| row[a]).collect();
        forward_substitute(&chol, k, &mut v);
        whitened.extend(v);
    }
    let log_norm = libm::log(n as f64)
        + 0.5 * (k as f64 * libm::log(2.0 * core::f64::consts::PI) + cholesky_log_det(&chol, k));
    Ok(LsaClass {
        dims,
        chol,
        whitened: Tensor::new(vec![n, k], whitened).map_err(|e| format!("{e}"))?,
        log_norm,
    })
}

fn fit_mdsa(acts: &Tensor, idx: &[usize]) -> ClassFit<MdsaClass> {
    let n = idx.len();
    if n < 2 {
        return Err(format!("pool has {n} activation(s), need at least 2"));
    }
    let d = acts.row_len();
    let (mean, mut cov) = covariance(acts.select_rows(idx).data(), n, d);
    let chol = cholesky_ridged(&mut cov, d, true).map_err(|e| format!("{e}"))?;
    Ok(MdsaClass { mean, chol })
}

/// Squared distances between query rows `[m × d]` and pool rows `[n × d]`.
fn sq_distances(q: &[f64], p: &[f64], p_norms: &[f64], m: usize, n: usize, d: usize) -> Vec<f64> {
    let mut dots = vec![0.0; m * n];
    matmul_nt(q, p, &mut dots, m, d, n);
    for i in 0..m {
        let qi = &q[i * d..(i + 1) * d];
        let qn: f64 = qi.iter().map(|v| v * v).sum();
        for j in 0..n {
            dots[i * n + j] = (qn + p_norms[j] - 2.0 * dots[i * n + j]).max(0.0);
        }
    }
    dots
}

fn row_norms(t: &Tensor) -> Vec<f64> {
    t.iter_rows().map(|r| r.iter().map(|v| v * v).sum()).collect()
}

fn exact_distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

fn fit_dsa(acts: &Tensor, by_class: &[Vec<usize>], rng: &mut SeededRng) -> Result<DsaPool> {
    let mut keep = Vec::new();
    for (c, idx) in by_class.iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let k = libm::ceil(DSA_POOL_FRACTION * idx.len() as f64) as usize;
        let mut sub: Vec<usize> = rng.split_index(c as u64).subsample(idx.len(), k).into_iter().map(|j| idx[j]).collect();
        keep.append(&mut sub);
    }
    keep.sort_unstable();
    let classes_all: Vec<usize> = {
        let mut cl = vec![0; acts.rows()];
        for (c, idx) in by_class.iter().enumerate() {
            for &i in idx {
                cl[i] = c;
            }
        }
        cl
    };
    let points = acts.select_rows(&keep).flatten_rows();
    let classes: Vec<usize> = keep.iter().map(|&i| classes_all[i]).collect();
    if classes.iter().all(|&c| c == classes[0]) {
        return Err(Error::Fit("DSA needs activations of at least two classes".into()));
    }
    let (m, d) = (points.rows(), points.row_len());
    let norms = row_norms(&points);
    let mut nearest_other = vec![0.0; m];
    for start in (0..m).step_by(QUERY_CHUNK) {
        let end = (start + QUERY_CHUNK).min(m);
        let q = &points.data()[start * d..end * d];
        let dist = sq_distances(q, points.data(), &norms, end - start, m, d);
        for i in start..end {
            let row = &dist[(i - start) * m..(i - start + 1) * m];
            let j = argmin_where(row, |j| classes[j] != classes[i]).expect("two classes present");
            nearest_other[i] = exact_distance(points.row(i), points.row(j));
        }
    }
    Ok(DsaPool {
        points,
        classes,
        nearest_other,
    })
}

fn argmin_where(row: &[f64], keep: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &v) in row.iter().enumerate() {
        if keep(j) && best.is_none_or(|b| v < row[b]) {
            best = Some(j);
        }
    }
    best
}

/// Fits per-class state from activations `[n × d]` grouped by `classes`.
pub fn fit_surprise(
    acts: &Tensor,
    classes: &[usize],
    num_classes: usize,
    variant: SurpriseVariant,
    seed: u64,
) -> Result<SurpriseFitState> {
    let acts = acts.clone().flatten_rows();
    let by_class = pools(&acts, classes, num_classes)?;
    Ok(match variant {
        SurpriseVariant::Lsa => SurpriseFitState::Lsa(by_class.iter().map(|idx| fit_lsa(&acts, idx)).collect()),
        SurpriseVariant::Mdsa => SurpriseFitState::Mdsa(by_class.iter().map(|idx| fit_mdsa(&acts, idx)).collect()),
        SurpriseVariant::Dsa => SurpriseFitState::Dsa(fit_dsa(&acts, &by_class, &mut SeededRng::new(seed).split("dsa"))?),
    })
}

fn class_state<T>(fits: &[ClassFit<T>], c: usize) -> Result<&T> {
    match fits.get(c) {
        Some(Ok(s)) => Ok(s),
        Some(Err(msg)) => Err(Error::Fit(format!("class {c}: {msg}"))),
        None => Err(Error::config(format!("class {c} out of range"))),
    }
}

/// Score of one activation vector under its predicted class.
pub fn surprise_score(state: &SurpriseFitState, activation: &[f64], predicted: usize) -> Result<f64> {
    let t = Tensor::new(vec![1, activation.len()], activation.to_vec())?;
    Ok(surprise_scores(state, &t, &[predicted])?[0])
}

/// Scores for activations `[m × d]` with their predicted classes.
pub fn surprise_scores(state: &SurpriseFitState, acts: &Tensor, predicted: &[usize]) -> Result<Vec<f64>> {
    let acts = acts.clone().flatten_rows();
    if acts.rows() != predicted.len() {
        return Err(Error::dim("surprise_scores", &[predicted.len()], &[acts.rows()]));
    }
    let mut out = vec![0.0; predicted.len()];
    match state {
        SurpriseFitState::Mdsa(fits) => {
            for (i, (a, &c)) in acts.iter_rows().zip(predicted).enumerate() {
                let s = class_state(fits, c)?;
                let mut v: Vec<f64> = a.iter().zip(&s.mean).map(|(x, m)| x - m).collect();
                forward_substitute(&s.chol, v.len(), &mut v);
                out[i] = libm::sqrt(v.iter().map(|x| x * x).sum());
            }
        }
        SurpriseFitState::Lsa(fits) => {
            // group queries by class so each pool is swept with one product
            for c in 0..fits.len() {
                let idx: Vec<usize> = (0..predicted.len()).filter(|&i| predicted[i] == c).collect();
                if idx.is_empty() {
                    continue;
                }
                let s = class_state(fits, c)?;
                let k = s.dims.len();
                let n = s.whitened.rows();
                let norms = row_norms(&s.whitened);
                for chunk in idx.chunks(QUERY_CHUNK) {
                    let mut q = Vec::with_capacity(chunk.len() * k);
                    for &i in chunk {
                        let mut v: Vec<f64> = s.dims.iter().map(|&a| acts.row(i)[a]).collect();
                        forward_substitute(&s.chol, k, &mut v);
                        q.extend(v);
                    }
                    let dist = sq_distances(&q, s.whitened.data(), &norms, chunk.len(), n, k);
                    for (r, &i) in chunk.iter().enumerate() {
                        let row = &dist[r * n..(r + 1) * n];
                        let mx = row.iter().map(|d| -0.5 * d).fold(f64::NEG_INFINITY, f64::max);
                        let lse = mx + libm::log(row.iter().map(|d| libm::exp(-0.5 * d - mx)).sum::<f64>());
                        out[i] = s.log_norm - lse;
                    }
                }
            }
        }
        SurpriseFitState::Dsa(pool) => {
            let (m, d) = (pool.points.rows(), pool.points.row_len());
            if acts.row_len() != d {
                return Err(Error::dim("DSA", &[d], &[acts.row_len()]));
            }
            let norms = row_norms(&pool.points);
            for start in (0..acts.rows()).step_by(QUERY_CHUNK) {
                let end = (start + QUERY_CHUNK).min(acts.rows());
                let dist = sq_distances(&acts.data()[start * d..end * d], pool.points.data(), &norms, end - start, m, d);
                for i in start..end {
                    let row = &dist[(i - start) * m..(i - start + 1) * m];
                    let c = predicted[i];
                    let j = argmin_where(row, |j| pool.classes[j] == c)
                        .ok_or_else(|| Error::Fit(format!("DSA pool has no activation of class {c}")))?;
                    let num = exact_distance(acts.row(i), pool.points.row(j));
                    out[i] = num / pool.nearest_other[j];
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(seed: u64) -> (Tensor, Vec<usize>) {
        let mut rng = SeededRng::new(seed);
        let mut data = Vec::new();
        let mut classes = Vec::new();
        for i in 0..20 {
            let c = i % 2;
            let off = if c == 0 { -1.0 } else { 1.0 };
            data.push(off + 0.7 * rng.normal());
            data.push(0.5 * rng.normal() + 0.3 * off);
            classes.push(c);
        }
        (Tensor::new(vec![20, 2], data).unwrap(), classes)
    }

    #[test]
    fn mdsa_of_class_mean_is_zero() {
        let (acts, classes) = synthetic(1);
        let st = fit_surprise(&acts, &classes, 2, SurpriseVariant::Mdsa, 0).unwrap();
        let SurpriseFitState::Mdsa(fits) = &st else { unreachable!() };
        let mean = fits[1].as_ref().unwrap().mean.clone();
        assert_eq!(surprise_score(&st, &mean, 1).unwrap(), 0.0);
    }

    #[test]
    fn small_pool_is_a_fit_error() {
        let acts = Tensor::new(vec![3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let st = fit_surprise(&acts, &[0, 0, 1], 2, SurpriseVariant::Mdsa, 0).unwrap();
        assert!(matches!(surprise_score(&st, &[0.0, 0.0], 1), Err(Error::Fit(_))));
        assert!(surprise_score(&st, &[0.0, 0.0], 0).is_ok());
    }

    #[test]
    fn dsa_coincident_point_scores_zero() {
        let (acts, classes) = synthetic(2);
        let st = fit_surprise(&acts, &classes, 2, SurpriseVariant::Dsa, 3).unwrap();
        let SurpriseFitState::Dsa(pool) = &st else { unreachable!() };
        let p = pool.points.row(0).to_vec();
        assert_eq!(surprise_score(&st, &p, pool.classes[0]).unwrap(), 0.0);
    }
}
