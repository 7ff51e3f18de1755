//! Heterogeneous sampling of the corridor between the two prior modes.
//!
//! The confined latent space is cut into a grid; each cell's anchor (its
//! centre) is labelled, cells whose anchor is not ambiguous enough get
//! weight 0, and the rest are weighted by the decoder's local sensitivity
//! so that regions where the image changes quickly are sampled more.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::nn::Mlp;
use crate::raae::{LatentPrior, ProbabilisticLabel, RaaeModel};
use crate::rng::SeededRng;
use crate::{Error, Result, Tensor};

/// Default grid resolution per axis.
pub const DEFAULT_GRID: usize = 40;
/// Retry budget per requested sample.
pub const RETRIES_PER_SAMPLE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfinedLatentSpace {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl ConfinedLatentSpace {
    pub fn new(x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) -> Result<Self> {
        if !(x_lo < x_hi && y_lo < y_hi) {
            return Err(Error::config("confined latent space needs x_lo < x_hi and y_lo < y_hi"));
        }
        Ok(ConfinedLatentSpace { x_lo, x_hi, y_lo, y_hi })
    }
}

/// First axis between the two mode means, second axis at the shared mean
/// ± 5 shared standard deviations.
pub fn compute_cls(prior: &LatentPrior) -> Result<ConfinedLatentSpace> {
    prior.validate()?;
    if prior.dim() != 2 {
        return Err(Error::config("the confined latent space is defined for d = 2 only"));
    }
    let [m1, m2] = &prior.means;
    let [s1, s2] = &prior.stds;
    if m1[1] != m2[1] || s1[1] != s2[1] {
        return Err(Error::config("modes must share their second-axis mean and std"));
    }
    if m1[0] == m2[0] {
        return Err(Error::config("modes are not separated on the first axis"));
    }
    ConfinedLatentSpace::new(
        m1[0].min(m2[0]),
        m1[0].max(m2[0]),
        m1[1] - 5.0 * s1[1],
        m1[1] + 5.0 * s1[1],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub ix: usize,
    pub iy: usize,
    /// `[x0, x1, y0, y1]`.
    pub bounds: [f64; 4],
    pub anchor: [f64; 2],
    /// `None` when the anchor is unlabelable.
    pub label: Option<ProbabilisticLabel>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub cls: ConfinedLatentSpace,
    pub nx: usize,
    pub ny: usize,
    pub delta_max: f64,
    /// Row-major over `(iy, ix)`.
    pub cells: Vec<GridCell>,
    /// Normalized weights, parallel to `cells`.
    pub probabilities: Vec<f64>,
}

fn edge(lo: f64, hi: f64, i: usize, n: usize) -> f64 {
    if i == n {
        hi
    } else {
        lo + (hi - lo) * (i as f64 / n as f64)
    }
}

/// Grid cells covering `cls` with labels and weights left unset.
pub fn grid(cls: &ConfinedLatentSpace, nx: usize, ny: usize) -> Result<Vec<GridCell>> {
    if nx == 0 || ny == 0 {
        return Err(Error::config("grid dimensions must be at least 1"));
    }
    let mut cells = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let bounds = [
                edge(cls.x_lo, cls.x_hi, ix, nx),
                edge(cls.x_lo, cls.x_hi, ix + 1, nx),
                edge(cls.y_lo, cls.y_hi, iy, ny),
                edge(cls.y_lo, cls.y_hi, iy + 1, ny),
            ];
            cells.push(GridCell {
                ix,
                iy,
                anchor: [0.5 * (bounds[0] + bounds[1]), 0.5 * (bounds[2] + bounds[3])],
                bounds,
                label: None,
                weight: 0.0,
            });
        }
    }
    Ok(cells)
}

/// Cell index holding `z`: cells are half-open `[x0, x1) × [y0, y1)`
/// except the last column and row, which include their upper edge.
pub fn cell_of(plan: &SamplingPlan, z: [f64; 2]) -> Option<usize> {
    let locate = |v: f64, lo: f64, hi: f64, n: usize| -> Option<usize> {
        if !(lo..=hi).contains(&v) {
            return None;
        }
        let mut i = (((v - lo) / (hi - lo)) * n as f64) as usize;
        i = i.min(n - 1);
        // guard against rounding at shared edges
        while i > 0 && v < edge(lo, hi, i, n) {
            i -= 1;
        }
        while i + 1 < n && v >= edge(lo, hi, i + 1, n) {
            i += 1;
        }
        Some(i)
    };
    let c = &plan.cls;
    let ix = locate(z[0], c.x_lo, c.x_hi, plan.nx)?;
    let iy = locate(z[1], c.y_lo, c.y_hi, plan.ny)?;
    Some(iy * plan.nx + ix)
}

/// Plan from an arbitrary decoder and labeller. Cells whose anchor gap
/// `|p1 − p2|` exceeds `delta_max` (or that cannot be labelled) get weight
/// 0; the others get the Frobenius norm of the decoder Jacobian.
pub fn build_plan_with(
    decoder: &Mlp,
    mut label: impl FnMut(&[f64; 2]) -> Result<ProbabilisticLabel>,
    cls: ConfinedLatentSpace,
    nx: usize,
    ny: usize,
    delta_max: f64,
) -> Result<SamplingPlan> {
    if !(delta_max > 0.0 && delta_max < 1.0) {
        return Err(Error::config("delta_max must lie in (0, 1)"));
    }
    let mut cells = grid(&cls, nx, ny)?;
    for cell in cells.iter_mut() {
        cell.label = match label(&cell.anchor) {
            Ok(l) => Some(l),
            Err(Error::Unlabelable { .. }) => None,
            Err(e) => return Err(e),
        };
        if let Some(l) = cell.label {
            if l.gap() <= delta_max {
                cell.weight = decoder.jacobian_frobenius_norm(&cell.anchor)?;
            }
        }
    }
    let total: f64 = cells.iter().map(|c| c.weight).sum();
    if !(total > 0.0) {
        return Err(Error::EmptyPlan);
    }
    let probabilities = cells.iter().map(|c| c.weight / total).collect();
    Ok(SamplingPlan {
        cls,
        nx,
        ny,
        delta_max,
        cells,
        probabilities,
    })
}

/// Plan over an accepted rAAE.
pub fn build_plan(model: &RaaeModel, nx: usize, ny: usize, delta_max: f64) -> Result<SamplingPlan> {
    if !model.is_accepted() {
        return Err(Error::config("sampling plans require an accepted rAAE"));
    }
    let cls = compute_cls(&model.prior)?;
    let cells = grid(&cls, nx, ny)?;
    let anchors = Tensor::new(vec![cells.len(), 2], cells.iter().flat_map(|c| c.anchor).collect())?;
    let mut labels = model.labels(&anchors)?.into_iter();
    build_plan_with(
        &model.autoencoder.decoder,
        |_| labels.next().expect("one label per anchor"),
        cls,
        nx,
        ny,
        delta_max,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguousSample {
    pub image: Vec<f64>,
    pub label: ProbabilisticLabel,
    pub latent: [f64; 2],
}

/// Retry budget exhausted; carries what was accepted so far.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawError {
    pub samples: Vec<AmbiguousSample>,
    pub error: Error,
}

impl core::fmt::Display for DrawError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        self.error.fmt(f)
    }
}

impl core::error::Error for DrawError {}

/// Inverse-CDF cell picker.
#[derive(Debug, Clone)]
pub struct CellSampler {
    cumulative: Vec<f64>,
}

impl CellSampler {
    pub fn new(probabilities: &[f64]) -> Self {
        let mut acc = 0.0;
        let cumulative = probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        CellSampler { cumulative }
    }

    pub fn pick(&self, rng: &mut SeededRng) -> usize {
        let total = *self.cumulative.last().expect("non-empty plan");
        let u = rng.uniform() * total;
        // first cell whose cumulative weight exceeds u; zero-weight cells
        // repeat their predecessor's value and are never returned
        let i = self.cumulative.partition_point(|&c| c <= u);
        i.min(self.cumulative.len() - 1)
    }
}

/// Uniform point inside a cell.
pub fn point_in_cell(cell: &GridCell, rng: &mut SeededRng) -> [f64; 2] {
    let [x0, x1, y0, y1] = cell.bounds;
    [rng.uniform_in(x0, x1), rng.uniform_in(y0, y1)]
}

/// Rejection sampling: pick a cell by weight, a point uniformly inside it,
/// decode and label it, keep it if `|p1 − p2| ≤ delta_final`. A rejection
/// draws a fresh cell.
pub fn draw_samples_with(
    decoder: &Mlp,
    mut label: impl FnMut(&[f64; 2]) -> Result<ProbabilisticLabel>,
    plan: &SamplingPlan,
    n: usize,
    delta_final: f64,
    rng: &mut SeededRng,
) -> Result<Vec<AmbiguousSample>, DrawError> {
    let fail = |error| DrawError {
        samples: Vec::new(),
        error,
    };
    if n == 0 {
        return Err(fail(Error::config("at least one sample must be requested")));
    }
    if plan.probabilities.iter().all(|p| *p <= 0.0) {
        return Err(fail(Error::EmptyPlan));
    }
    let picker = CellSampler::new(&plan.probabilities);
    let budget = RETRIES_PER_SAMPLE * n;
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        if attempts == budget {
            return Err(DrawError {
                error: Error::RetryBudgetExhausted {
                    attempts,
                    accepted: out.len(),
                    requested: n,
                },
                samples: out,
            });
        }
        attempts += 1;
        let z = point_in_cell(&plan.cells[picker.pick(rng)], rng);
        let l = match label(&z) {
            Ok(l) => l,
            Err(Error::Unlabelable { .. }) => continue,
            Err(e) => return Err(DrawError { samples: out, error: e }),
        };
        if l.gap() > delta_final {
            continue;
        }
        let image = match Tensor::new(vec![1, 2], z.to_vec()).and_then(|t| decoder.forward(&t)) {
            Ok(x) => x.into_data(),
            Err(e) => return Err(DrawError { samples: out, error: e }),
        };
        out.push(AmbiguousSample { image, label: l, latent: z });
    }
    Ok(out)
}

pub fn draw_samples(
    model: &RaaeModel,
    plan: &SamplingPlan,
    n: usize,
    delta_final: f64,
    rng: &mut SeededRng,
) -> Result<Vec<AmbiguousSample>, DrawError> {
    draw_samples_with(
        &model.autoencoder.decoder,
        |z| crate::raae::probabilistic_label(model, z),
        plan,
        n,
        delta_final,
        rng,
    )
}

/// Decoded images at `steps` equally spaced points from `start` to `end`
/// inclusive.
pub fn interpolate(decoder: &Mlp, start: &[f64], end: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
    if steps < 2 {
        return Err(Error::config("interpolation needs at least two steps"));
    }
    if start.len() != end.len() || start.len() != decoder.in_dim() {
        return Err(Error::dim("interpolate", &[decoder.in_dim()], &[start.len(), end.len()]));
    }
    let d = start.len();
    let mut points = Vec::with_capacity(steps * d);
    for i in 0..steps {
        let t = i as f64 / (steps - 1) as f64;
        points.extend(start.iter().zip(end).map(|(a, b)| (1.0 - t) * a + t * b));
    }
    let out = decoder.forward(&Tensor::new(vec![steps, d], points)?)?;
    Ok(out.iter_rows().map(<[f64]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer};
    use crate::raae::ClassPair;

    fn pair() -> ClassPair {
        ClassPair::new(3, 8, "mnist").unwrap()
    }

    fn small_decoder(seed: u64) -> Mlp {
        Mlp::glorot(&[2, 8, 6], Activation::Tanh, Activation::Sigmoid, &mut SeededRng::new(seed)).unwrap()
    }

    /// Label ∝ logistic in the first coordinate: p1 = σ(−x).
    fn soft_label(z: &[f64; 2]) -> Result<ProbabilisticLabel> {
        let s = 1.0 / (1.0 + libm::exp(z[0]));
        ProbabilisticLabel::from_supports(&pair(), s, 1.0 - s)
    }

    #[test]
    fn cls_examples() {
        let c = compute_cls(&LatentPrior::default()).unwrap();
        assert_eq!((c.x_lo, c.x_hi, c.y_lo, c.y_hi), (-3.0, 3.0, -5.0, 5.0));
        let p = LatentPrior {
            means: [vec![-6.0, 1.0], vec![6.0, 1.0]],
            stds: [vec![1.0, 2.0], vec![1.0, 2.0]],
        };
        let c = compute_cls(&p).unwrap();
        assert_eq!((c.x_lo, c.x_hi, c.y_lo, c.y_hi), (-6.0, 6.0, -9.0, 11.0));
        let p = LatentPrior {
            means: [vec![1.0, 0.0], vec![1.0, 0.0]],
            ..LatentPrior::default()
        };
        assert!(matches!(compute_cls(&p), Err(Error::Config(_))));
    }

    #[test]
    fn anchors_are_midpoints_and_unambiguous_cells_are_zero() {
        let cls = compute_cls(&LatentPrior::default()).unwrap();
        let dec = small_decoder(1);
        let plan = build_plan_with(&dec, soft_label, cls, 12, 7, 0.25).unwrap();
        for c in &plan.cells {
            assert_eq!(c.anchor, [0.5 * (c.bounds[0] + c.bounds[1]), 0.5 * (c.bounds[2] + c.bounds[3])]);
            let gap = c.label.unwrap().gap();
            if gap > 0.25 {
                assert_eq!(c.weight, 0.0);
            } else {
                assert!(c.weight > 0.0);
            }
        }
        assert!((plan.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn confident_anchor_gets_zero_weight() {
        let cls = ConfinedLatentSpace::new(0.0, 1.0, 0.0, 1.0).unwrap();
        let dec = small_decoder(2);
        let r = build_plan_with(&dec, |_| ProbabilisticLabel::from_supports(&pair(), 0.9, 0.1), cls, 1, 1, 0.25);
        assert_eq!(r.unwrap_err(), Error::EmptyPlan);
    }

    #[test]
    fn constant_decoder_gives_empty_plan() {
        let w = Tensor::zeros(&[4, 2]);
        let dec = Mlp::new(vec![DenseLayer::new(w, Tensor::filled(&[4], 0.3), Activation::Sigmoid).unwrap()]).unwrap();
        let cls = compute_cls(&LatentPrior::default()).unwrap();
        let r = build_plan_with(&dec, soft_label, cls, 10, 10, 0.4);
        assert_eq!(r.unwrap_err(), Error::EmptyPlan);
    }

    #[test]
    fn vacuous_filter_accepts_everything() {
        let cls = compute_cls(&LatentPrior::default()).unwrap();
        let dec = small_decoder(3);
        let plan = build_plan_with(&dec, soft_label, cls, 10, 10, 0.9).unwrap();
        let mut rng = SeededRng::new(4);
        let mut calls = 0;
        let s = draw_samples_with(
            &dec,
            |z| {
                calls += 1;
                soft_label(z)
            },
            &plan,
            200,
            1.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!((s.len(), calls), (200, 200));
    }

    #[test]
    fn filter_holds_and_draws_are_deterministic() {
        let cls = compute_cls(&LatentPrior::default()).unwrap();
        let dec = small_decoder(5);
        let plan = build_plan_with(&dec, soft_label, cls, 20, 20, 0.4).unwrap();
        let a = draw_samples_with(&dec, soft_label, &plan, 300, 0.25, &mut SeededRng::new(6)).unwrap();
        let b = draw_samples_with(&dec, soft_label, &plan, 300, 0.25, &mut SeededRng::new(6)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.label.gap() <= 0.25));
    }

    #[test]
    fn exhausted_budget_returns_partial_samples() {
        let cls = compute_cls(&LatentPrior::default()).unwrap();
        let dec = small_decoder(5);
        let plan = build_plan_with(&dec, soft_label, cls, 20, 20, 0.9).unwrap();
        // only |x| < ~0.01 passes a 0.005 gap: rare but possible
        let err = draw_samples_with(&dec, soft_label, &plan, 50, 0.005, &mut SeededRng::new(1)).unwrap_err();
        match err.error {
            Error::RetryBudgetExhausted { attempts, accepted, requested } => {
                assert_eq!((attempts, requested), (2500, 50));
                assert_eq!(accepted, err.samples.len());
                assert!(accepted < 50);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let dec = small_decoder(7);
        let (a, b) = ([-1.3, 0.7], [2.1, -0.4]);
        let two = interpolate(&dec, &a, &b, 2).unwrap();
        let da = dec.forward(&Tensor::new(vec![1, 2], a.to_vec()).unwrap()).unwrap();
        let db = dec.forward(&Tensor::new(vec![1, 2], b.to_vec()).unwrap()).unwrap();
        assert_eq!((two[0].as_slice(), two[1].as_slice()), (da.data(), db.data()));
        let three = interpolate(&dec, &a, &b, 3).unwrap();
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        let dm = dec.forward(&Tensor::new(vec![1, 2], mid.to_vec()).unwrap()).unwrap();
        assert_eq!(three[1].as_slice(), dm.data());
        let same = interpolate(&dec, &a, &a, 5).unwrap();
        assert!(same.windows(2).all(|w| w[0] == w[1]));
        assert!(interpolate(&dec, &a, &b, 1).is_err());
    }
}
