//! Image and label sets, and the constructors for the four test-set
//! families plus mixed-ambiguous training data.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::models::ClassifierModel;
use crate::nn::LossKind;
use crate::rng::SeededRng;
use crate::tensor::argmax;
use crate::{Error, Result, Tensor, IMAGE_PIXELS, IMAGE_SIDE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Nominal,
    Ambiguous,
    Corrupted,
    Adversarial,
    Invalid,
}

impl SourceTag {
    pub const ALL: [SourceTag; 5] = [
        SourceTag::Nominal,
        SourceTag::Ambiguous,
        SourceTag::Corrupted,
        SourceTag::Adversarial,
        SourceTag::Invalid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::Nominal => "nominal",
            SourceTag::Ambiguous => "ambiguous",
            SourceTag::Corrupted => "corrupted",
            SourceTag::Adversarial => "adversarial",
            SourceTag::Invalid => "invalid",
        }
    }
}

impl FromStr for SourceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SourceTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown test-set tag '{s}'")))
    }
}

/// `[N × 28 × 28]` images with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSet {
    pub images: Tensor,
    pub tag: SourceTag,
}

impl ImageSet {
    pub fn new(images: Tensor, tag: SourceTag) -> Result<Self> {
        let n = images.rows();
        let images = images.reshape(&[n, IMAGE_SIDE, IMAGE_SIDE])?;
        if let Some(i) = images.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::config(format!(
                "pixel {} of image {} is {} (outside [0, 1])",
                i % IMAGE_PIXELS,
                i / IMAGE_PIXELS,
                images.data()[i]
            )));
        }
        Ok(ImageSet { images, tag })
    }

    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[N × 784]` view.
    pub fn matrix(&self) -> Tensor {
        self.images.clone().flatten_rows()
    }
}

/// Probability rows `[N × C]`, optionally annotated with the generating
/// class pair of each row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub probs: Tensor,
    pub pairs: Option<Vec<(usize, usize)>>,
}

impl LabelSet {
    pub fn new(probs: Tensor, pairs: Option<Vec<(usize, usize)>>) -> Result<Self> {
        let (n, c) = probs.expect_matrix("LabelSet")?;
        for (i, row) in probs.iter_rows().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::config(format!("label row {i} is not a probability vector")));
            }
            if let Some(pairs) = &pairs {
                let (a, b) = pairs[i];
                let nonzero: Vec<usize> = (0..c).filter(|&k| row[k] > 0.0).collect();
                if a >= c || b >= c || nonzero.iter().any(|&k| k != a && k != b) || nonzero.len() != 2 {
                    return Err(Error::config(format!("label row {i} does not match its pair ({a}, {b})")));
                }
            }
        }
        if pairs.as_ref().is_some_and(|p| p.len() != n) {
            return Err(Error::dim("LabelSet pairs", &[n], &[pairs.as_ref().map_or(0, Vec::len)]));
        }
        Ok(LabelSet { probs, pairs })
    }

    /// One-hot rows for hard labels.
    pub fn one_hot(labels: &[usize], classes: usize) -> Result<Self> {
        let mut probs = vec![0.0; labels.len() * classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(Error::config(format!("label {l} out of range for {classes} classes")));
            }
            probs[i * classes + l] = 1.0;
        }
        Ok(LabelSet {
            probs: Tensor::new(vec![labels.len(), classes], probs)?,
            pairs: None,
        })
    }

    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.probs.shape()[1]
    }

    /// Argmax per row, ties to the lower index.
    pub fn hard(&self) -> Vec<usize> {
        self.probs.iter_rows().map(argmax).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub pairs: Vec<(usize, usize)>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilisticDataset {
    pub images: ImageSet,
    pub labels: LabelSet,
    pub provenance: Provenance,
}

impl ProbabilisticDataset {
    pub fn new(images: ImageSet, labels: LabelSet, provenance: Provenance) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::dim("ProbabilisticDataset", &[images.len()], &[labels.len()]));
        }
        Ok(ProbabilisticDataset {
            images,
            labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Foreign-domain images, tagged invalid and otherwise untouched.
pub fn make_invalid_set(foreign: &Tensor) -> Result<ImageSet> {
    if foreign.shape().len() < 2 || foreign.row_len() != IMAGE_PIXELS {
        return Err(Error::dim("make_invalid_set", &[foreign.shape()[0], IMAGE_SIDE, IMAGE_SIDE], foreign.shape()));
    }
    ImageSet::new(foreign.clone(), SourceTag::Invalid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    GaussianNoise,
    Rotation,
    BoxBlur,
    Brightness,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::Rotation,
        CorruptionKind::BoxBlur,
        CorruptionKind::Brightness,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian-noise",
            CorruptionKind::Rotation => "rotation",
            CorruptionKind::BoxBlur => "box-blur",
            CorruptionKind::Brightness => "brightness",
        }
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown corruption kind '{s}'")))
    }
}

/// Strength of each corruption at severities 1..=5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeverityTable {
    /// Noise standard deviation.
    pub gaussian_sigma: [f64; 5],
    /// Rotation angle in degrees (counter-clockwise).
    pub rotation_degrees: [f64; 5],
    /// Box-blur radius in pixels; the kernel is `(2r + 1)²`.
    pub blur_radius: [usize; 5],
    /// Additive brightness shift.
    pub brightness_shift: [f64; 5],
}

impl Default for SeverityTable {
    fn default() -> Self {
        SeverityTable {
            gaussian_sigma: [0.1, 0.2, 0.3, 0.4, 0.5],
            rotation_degrees: [15.0, 30.0, 45.0, 60.0, 75.0],
            blur_radius: [1, 1, 2, 2, 3],
            brightness_shift: [0.1, 0.2, 0.3, 0.4, 0.5],
        }
    }
}

/// Nearest-neighbour rotation about the image centre; pixels mapped from
/// outside the frame become 0.
pub fn rotate_image(image: &[f64], degrees: f64) -> Vec<f64> {
    let n = IMAGE_SIDE as isize;
    let c = (IMAGE_SIDE as f64 - 1.0) / 2.0;
    let theta = degrees.to_radians();
    let (sin, cos) = (libm::sin(theta), libm::cos(theta));
    let mut out = vec![0.0; IMAGE_PIXELS];
    for r in 0..IMAGE_SIDE {
        for col in 0..IMAGE_SIDE {
            // inverse map: output pixel → source pixel
            let (x, y) = (col as f64 - c, r as f64 - c);
            let sx = libm::round(cos * x + sin * y + c) as isize;
            let sy = libm::round(-sin * x + cos * y + c) as isize;
            if (0..n).contains(&sx) && (0..n).contains(&sy) {
                out[r * IMAGE_SIDE + col] = image[sy as usize * IMAGE_SIDE + sx as usize];
            }
        }
    }
    out
}

/// Mean over the `(2r + 1)²` window, clipped at the borders.
pub fn box_blur(image: &[f64], radius: usize) -> Vec<f64> {
    let n = IMAGE_SIDE as isize;
    let r = radius as isize;
    let mut out = vec![0.0; IMAGE_PIXELS];
    for y in 0..n {
        for x in 0..n {
            let (mut s, mut k) = (0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y + dy, x + dx);
                    if (0..n).contains(&yy) && (0..n).contains(&xx) {
                        s += image[(yy * n + xx) as usize];
                        k += 1.0;
                    }
                }
            }
            out[(y * n + x) as usize] = s / k;
        }
    }
    out
}

/// Label-preserving corruption; outputs are clipped to `[0, 1]`.
pub fn corrupt(
    images: &Tensor,
    kind: CorruptionKind,
    severity: usize,
    table: &SeverityTable,
    rng: &mut SeededRng,
) -> Result<ImageSet> {
    if !(1..=5).contains(&severity) {
        return Err(Error::config(format!("severity {severity} outside 1..=5")));
    }
    if images.shape().len() < 2 || images.row_len() != IMAGE_PIXELS {
        return Err(Error::dim("corrupt", &[images.shape()[0], IMAGE_PIXELS], images.shape()));
    }
    let s = severity - 1;
    let mut data = Vec::with_capacity(images.len());
    for img in images.iter_rows() {
        let out = match kind {
            CorruptionKind::GaussianNoise => {
                let sigma = table.gaussian_sigma[s];
                img.iter().map(|v| v + sigma * rng.normal()).collect()
            }
            CorruptionKind::Rotation => rotate_image(img, table.rotation_degrees[s]),
            CorruptionKind::BoxBlur => box_blur(img, table.blur_radius[s]),
            CorruptionKind::Brightness => img.iter().map(|v| v + table.brightness_shift[s]).collect::<Vec<_>>(),
        };
        data.extend(out.into_iter().map(|v: f64| v.clamp(0.0, 1.0)));
    }
    ImageSet::new(Tensor::new(images.shape().to_vec(), data)?, SourceTag::Corrupted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub pgd_step: f64,
    pub pgd_iterations: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon: 0.2,
            pgd_step: 0.02,
            pgd_iterations: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub images: ImageSet,
    /// Whether the attacked image is misclassified.
    pub success: Vec<bool>,
}

impl AttackResult {
    pub fn success_rate(&self) -> f64 {
        self.success.iter().filter(|s| **s).count() as f64 / self.success.len().max(1) as f64
    }
}

const ATTACK_CHUNK: usize = 256;

/// Sign of the soft cross-entropy input gradient, per chunk. The loss is a
/// batch mean, so the gradient is rescaled by the batch size; only its sign
/// is used.
fn gradient_signs(model: &ClassifierModel, x: &Tensor, targets: &Tensor) -> Result<Vec<f64>> {
    let (_, g) = model.net.input_gradient(x, targets, LossKind::SoftCrossEntropy)?;
    Ok(g.data().iter().map(|v| if *v > 0.0 { 1.0 } else if *v < 0.0 { -1.0 } else { 0.0 }).collect())
}

fn attack(
    model: &ClassifierModel,
    images: &Tensor,
    labels: &[usize],
    step: impl Fn(&Tensor, &Tensor) -> Result<Vec<f64>>,
) -> Result<AttackResult> {
    let x = images.clone().flatten_rows();
    if x.row_len() != model.net.in_dim() || x.rows() != labels.len() {
        return Err(Error::dim("attack", &[labels.len(), model.net.in_dim()], images.shape()));
    }
    let classes = model.classes();
    let mut out = Vec::with_capacity(x.len());
    for start in (0..x.rows()).step_by(ATTACK_CHUNK) {
        let end = (start + ATTACK_CHUNK).min(x.rows());
        let bx = x.slice_rows(start, end);
        let by = LabelSet::one_hot(&labels[start..end], classes)?.probs;
        out.extend(step(&bx, &by)?);
    }
    let adv = Tensor::new(x.shape().to_vec(), out)?;
    let pred = model.predict(&adv)?;
    let success = pred.iter_rows().zip(labels).map(|(p, &l)| argmax(p) != l).collect();
    Ok(AttackResult {
        images: ImageSet::new(adv.reshape(images.shape())?, SourceTag::Adversarial)?,
        success,
    })
}

/// `x' = clip(x + ε·sign(∇ₓ loss), 0, 1)`.
pub fn fgsm_attack(model: &ClassifierModel, images: &Tensor, labels: &[usize], epsilon: f64) -> Result<AttackResult> {
    if !(epsilon >= 0.0) {
        return Err(Error::config("epsilon must be non-negative"));
    }
    attack(model, images, labels, |x, y| {
        let s = gradient_signs(model, x, y)?;
        Ok(x.data().iter().zip(&s).map(|(v, g)| (v + epsilon * g).clamp(0.0, 1.0)).collect())
    })
}

/// Iterated signed steps projected onto the ε-ball around the input and
/// onto `[0, 1]`; no random start.
pub fn pgd_attack(
    model: &ClassifierModel,
    images: &Tensor,
    labels: &[usize],
    epsilon: f64,
    step: f64,
    iterations: usize,
) -> Result<AttackResult> {
    if !(epsilon >= 0.0 && step >= 0.0) {
        return Err(Error::config("epsilon and step must be non-negative"));
    }
    attack(model, images, labels, |x0, y| {
        let mut x = x0.clone();
        for _ in 0..iterations {
            let s = gradient_signs(model, &x, y)?;
            for ((v, o), g) in x.data_mut().iter_mut().zip(x0.data()).zip(&s) {
                *v = (*v + step * g).clamp(o - epsilon, o + epsilon).clamp(0.0, 1.0);
            }
        }
        Ok(x.into_data())
    })
}

/// Nominal rows (one-hot) followed by ambiguous rows, then shuffled.
pub fn assemble_mixed_training(
    nominal: &Tensor,
    nominal_labels: &[usize],
    classes: usize,
    ambiguous: &ProbabilisticDataset,
    rng: &mut SeededRng,
) -> Result<ProbabilisticDataset> {
    if !ambiguous.is_empty() && ambiguous.labels.classes() != classes {
        return Err(Error::config(format!(
            "class-count mismatch: nominal {classes}, ambiguous {}",
            ambiguous.labels.classes()
        )));
    }
    if nominal.rows() != nominal_labels.len() {
        return Err(Error::dim("assemble_mixed_training", &[nominal_labels.len()], &[nominal.rows()]));
    }
    let one_hot = LabelSet::one_hot(nominal_labels, classes)?;
    let n = nominal.rows();
    let m = ambiguous.len();
    let images = Tensor::concat_rows(&[&nominal.clone().reshape(&[n, IMAGE_SIDE, IMAGE_SIDE])?, &ambiguous.images.images])?;
    let probs = Tensor::concat_rows(&[&one_hot.probs, &ambiguous.labels.probs.clone().reshape(&[m, classes])?])?;
    let order = rng.permutation(n + m);
    let mut provenance = ambiguous.provenance.clone();
    provenance.notes.push(format!("mixed: {n} nominal + {m} ambiguous rows, shuffle seed {}", rng.seed()));
    ProbabilisticDataset::new(
        ImageSet::new(images.select_rows(&order), SourceTag::Nominal)?,
        LabelSet::new(probs.select_rows(&order), None)?,
        provenance,
    )
}
