//! Eigenmap-guided self-training: probability-weighted class centroids in
//! the deep and spectral descriptor spaces, pseudo-labels from a convex
//! combination of cosine similarities, and the adaptation loss terms.
//!
//! Loss gradients are expressed with respect to logits (chained through
//! softmax here) so the classifier's backward pass can consume them
//! directly. Logs and cosine denominators are clamped at 1e-12, which
//! keeps every loss finite without moving well-conditioned values.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

const CLAMP: f64 = 1e-12;

/// Per-batch descriptor matrices: deep `B x 128`, spectral `B x m`, and
/// the current class probabilities `B x C`.
#[derive(Debug, Clone)]
pub struct BatchDescriptors {
    pub deep: Array2<f64>,
    pub spectral: Array2<f64>,
    pub probabilities: Array2<f64>,
}

impl BatchDescriptors {
    pub fn new(deep: Array2<f64>, spectral: Array2<f64>, probabilities: Array2<f64>) -> Result<Self> {
        let b = deep.nrows();
        if spectral.nrows() != b || probabilities.nrows() != b {
            return Err(Error::Dimension(format!(
                "batch sizes disagree: deep {b}, spectral {}, probabilities {}",
                spectral.nrows(),
                probabilities.nrows()
            )));
        }
        if b == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        for (i, row) in probabilities.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "probability row {i} sums to {sum}"
                )));
            }
        }
        Ok(Self {
            deep,
            spectral,
            probabilities,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.deep.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.probabilities.ncols()
    }
}

/// Probability-weighted class centroids. Classes whose total probability
/// mass is below 1e-12 are flagged empty and excluded from labeling.
#[derive(Debug, Clone)]
pub struct Centroids {
    pub deep: Array2<f64>,
    pub spectral: Array2<f64>,
    pub support: Array1<f64>,
}

impl Centroids {
    pub fn is_empty_class(&self, c: usize) -> bool {
        self.support[c] < CLAMP
    }

    pub fn n_nonempty(&self) -> usize {
        (0..self.support.len())
            .filter(|&c| !self.is_empty_class(c))
            .count()
    }
}

/// Soft cluster centers per class: descriptors weighted by the class
/// probability of each sample.
pub fn compute_centroids(batch: &BatchDescriptors) -> Centroids {
    let b = batch.batch_size();
    let c = batch.n_classes();
    let d_deep = batch.deep.ncols();
    let d_spec = batch.spectral.ncols();
    let mut deep = Array2::zeros((c, d_deep));
    let mut spectral = Array2::zeros((c, d_spec));
    let mut support = Array1::zeros(c);
    for i in 0..b {
        for class in 0..c {
            let w = batch.probabilities[[i, class]];
            support[class] += w;
            for j in 0..d_deep {
                deep[[class, j]] += w * batch.deep[[i, j]];
            }
            for j in 0..d_spec {
                spectral[[class, j]] += w * batch.spectral[[i, j]];
            }
        }
    }
    for class in 0..c {
        let s = support[class];
        if s >= CLAMP {
            for j in 0..d_deep {
                deep[[class, j]] /= s;
            }
            for j in 0..d_spec {
                spectral[[class, j]] /= s;
            }
        } else {
            // empty class: zero centroid, flagged via support
            for j in 0..d_deep {
                deep[[class, j]] = 0.0;
            }
            for j in 0..d_spec {
                spectral[[class, j]] = 0.0;
            }
        }
    }
    Centroids {
        deep,
        spectral,
        support,
    }
}

/// How the combined similarity turns into a label. `ArgmaxSim` picks the
/// most similar class; `LiteralArgmin` picks the least similar one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    ArgmaxSim,
    LiteralArgmin,
}

/// Pseudo-labels with the combined similarity matrix that produced them.
#[derive(Debug, Clone)]
pub struct PseudoLabels {
    pub labels: Vec<usize>,
    pub scores: Array2<f64>,
    /// How many cosine terms hit a zero-norm descriptor and were defined
    /// as 0.
    pub zero_norm_count: usize,
}

fn cosine(a: &[f64], b: &[f64], zero_norm: &mut usize) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = na.sqrt() * nb.sqrt();
    if denom < CLAMP {
        *zero_norm += 1;
        0.0
    } else {
        dot / denom
    }
}

/// Combines per-class cosine similarities in the deep and spectral spaces
/// with weights `alpha` and `1 - alpha`, then labels each sample. Empty
/// classes never win; ties break to the lower class index.
pub fn pseudo_label(
    batch: &BatchDescriptors,
    centroids: &Centroids,
    alpha: f64,
    rule: LabelRule,
) -> Result<PseudoLabels> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!(
            "alpha must be in [0,1], got {alpha}"
        )));
    }
    let b = batch.batch_size();
    let c = batch.n_classes();
    if centroids.n_nonempty() == 0 {
        return Err(Error::Numeric("all classes have empty centroids".into()));
    }
    let mut scores = Array2::zeros((b, c));
    let mut zero_norm = 0usize;
    for i in 0..b {
        let fd = batch.deep.row(i);
        let fs = batch.spectral.row(i);
        for class in 0..c {
            let sim_d = cosine(
                fd.as_slice().unwrap(),
                centroids.deep.row(class).as_slice().unwrap(),
                &mut zero_norm,
            );
            let sim_s = cosine(
                fs.as_slice().unwrap(),
                centroids.spectral.row(class).as_slice().unwrap(),
                &mut zero_norm,
            );
            scores[[i, class]] = alpha * sim_d + (1.0 - alpha) * sim_s;
        }
    }
    let labels = (0..b)
        .map(|i| {
            let mut best = None;
            for class in 0..c {
                if centroids.is_empty_class(class) {
                    continue;
                }
                let s = scores[[i, class]];
                let better = match (rule, best) {
                    (_, None) => true,
                    (LabelRule::ArgmaxSim, Some((_, bs))) => s > bs,
                    (LabelRule::LiteralArgmin, Some((_, bs))) => s < bs,
                };
                if better {
                    best = Some((class, s));
                }
            }
            best.expect("at least one nonempty class").0
        })
        .collect();
    Ok(PseudoLabels {
        labels,
        scores,
        zero_norm_count: zero_norm,
    })
}

/// Cross-entropy against a (pseudo-)label.
pub fn loss_pl(probabilities: &Array1<f64>, label: usize) -> f64 {
    -probabilities[label].max(CLAMP).ln()
}

/// Gradient of [`loss_pl`] with respect to the logits: `p - onehot`.
pub fn grad_pl_logits(probabilities: &Array1<f64>, label: usize) -> Array1<f64> {
    let mut g = probabilities.clone();
    g[label] -= 1.0;
    g
}

/// Shannon entropy of a prediction; in `[0, log C]`.
pub fn loss_ent(probabilities: &Array1<f64>) -> f64 {
    -probabilities
        .iter()
        .map(|&p| p * p.max(CLAMP).ln())
        .sum::<f64>()
}

/// Gradient of [`loss_ent`] with respect to the logits.
pub fn grad_ent_logits(probabilities: &Array1<f64>) -> Array1<f64> {
    // dL/dp_c = -(ln p_c + 1), chained through softmax:
    // dz = p .* (g - <g, p>)
    let g = probabilities.mapv(|p| -(p.max(CLAMP).ln() + 1.0));
    chain_softmax(probabilities, &g)
}

/// Negative entropy of the batch-mean prediction; in `[-log C, 0]`,
/// minimized when the mean prediction is uniform.
pub fn loss_div(batch_probabilities: &Array2<f64>) -> f64 {
    let b = batch_probabilities.nrows() as f64;
    let mean = batch_probabilities.sum_axis(ndarray::Axis(0)) / b;
    mean.iter().map(|&g| g * g.max(CLAMP).ln()).sum()
}

/// Per-sample logit gradients of [`loss_div`], `B x C`.
pub fn grad_div_logits(batch_probabilities: &Array2<f64>) -> Array2<f64> {
    let b = batch_probabilities.nrows();
    let mean = batch_probabilities.sum_axis(ndarray::Axis(0)) / b as f64;
    // dL/dp_{i,c} = (ln g_c + 1) / B, same for every sample
    let g = mean.mapv(|m| (m.max(CLAMP).ln() + 1.0) / b as f64);
    let mut out = Array2::zeros(batch_probabilities.raw_dim());
    for i in 0..b {
        let p = batch_probabilities.row(i).to_owned();
        out.row_mut(i).assign(&chain_softmax(&p, &g));
    }
    out
}

/// Chains a gradient w.r.t. probabilities through softmax:
/// `dz = p .* (g - <g, p>)`.
fn chain_softmax(p: &Array1<f64>, g: &Array1<f64>) -> Array1<f64> {
    let dot = p.dot(g);
    Array1::from_shape_fn(p.len(), |c| p[c] * (g[c] - dot))
}

/// Single-direction Chamfer distance from `original` to `shifted`:
/// mean over original points of the squared distance to the nearest
/// shifted point. Zero when `original` is a subset of `shifted`.
pub fn loss_cd(original: &Array2<f64>, shifted: &Array2<f64>) -> f64 {
    loss_cd_with_grad(original, shifted).0
}

/// Chamfer loss plus its gradient with respect to the shifted points.
/// Gradient flows only to each original point's nearest neighbor; ties
/// break to the lower index.
pub fn loss_cd_with_grad(original: &Array2<f64>, shifted: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = original.nrows();
    let m = shifted.nrows();
    assert!(n > 0 && m > 0, "chamfer needs nonempty clouds");
    let mut grad = Array2::zeros((m, 3));
    let mut total = 0.0;
    for i in 0..n {
        let xi = original.row(i);
        let mut best = f64::INFINITY;
        let mut best_j = 0usize;
        for j in 0..m {
            let yj = shifted.row(j);
            let dx = xi[0] - yj[0];
            let dy = xi[1] - yj[1];
            let dz = xi[2] - yj[2];
            let d = dx * dx + dy * dy + dz * dz;
            if d < best {
                best = d;
                best_j = j;
            }
        }
        total += best;
        for a in 0..3 {
            grad[[best_j, a]] += 2.0 / n as f64 * (shifted[[best_j, a]] - original[[i, a]]);
        }
    }
    (total / n as f64, grad)
}

/// The scalar loss components of one adaptation step.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LossParts {
    pub pl: f64,
    pub ent: f64,
    pub div: f64,
    pub cd: f64,
}

/// Input-adaptation objective: `pl + beta1 (ent + div) + beta2 cd`.
pub fn loss_input_adaptation(parts: &LossParts, beta1: f64, beta2: f64) -> f64 {
    parts.pl + beta1 * (parts.ent + parts.div) + beta2 * parts.cd
}

/// Model-adaptation objective: `pl + beta3 (ent + div)`; no Chamfer term.
pub fn loss_model_adaptation(parts: &LossParts, beta3: f64) -> f64 {
    parts.pl + beta3 * (parts.ent + parts.div)
}
