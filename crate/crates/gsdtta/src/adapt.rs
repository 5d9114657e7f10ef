//! The test-time adaptation driver: per-batch alternating optimization of
//! the spectral adjustments (input adaptation) and the classifier
//! parameters (model adaptation).
//!
//! Per batch, each cloud is prepared once: re-centered, built into an
//! outlier-aware graph, eigendecomposed, and reduced to what adaptation
//! needs (the adjustable low-frequency band of the basis, the spectral
//! descriptor and the GFT coefficients). The graph and basis are never
//! rebuilt within a batch; the adjustment lives in a fixed basis. The
//! schedule interleaves `input_steps_per_cycle` input steps with
//! `model_steps_per_cycle` model steps until `total_steps` gradient steps
//! have been scheduled; disabling a component skips its slots without
//! reallocating them.

use ndarray::{s, Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{build_outlier_aware_graph, GraphConfig};
use crate::nn::{self, AdaptScope, ClassifierState, ForwardTrace, ParamGrads};
use crate::pointcloud::PointCloud;
use crate::selftrain::{
    self, BatchDescriptors, LabelRule, LossParts, PseudoLabels,
};
use crate::spectral::{self, SpectralAdjustment, SpectralCoefficients};

/// Component switches: the point-shift stage, the model-adaptation stage,
/// and whether pseudo-labels blend in the spectral descriptor stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toggles {
    pub enable_gsdps: bool,
    pub enable_gsgma: bool,
    pub eigenmap_guided: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            enable_gsdps: true,
            enable_gsgma: true,
            eigenmap_guided: true,
        }
    }
}

/// When pseudo-labels are recomputed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRefresh {
    EveryStep,
    PerCycle,
}

/// Full adaptation configuration. Defaults pin the reference
/// hyperparameters: alpha 0.5, beta1 0.3, beta2 1000, beta3 3, M=100,
/// lr 1e-4, batch 32, 4 input + 1 model step per cycle, 10 total steps.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    /// Size M of the adjustable low-frequency band.
    pub m_band: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub input_steps_per_cycle: usize,
    pub model_steps_per_cycle: usize,
    pub total_steps: usize,
    pub toggles: Toggles,
    pub graph: GraphConfig,
    pub seed: u64,
    /// Which classifier parameters model adaptation updates.
    pub adapt_scope: AdaptScope,
    /// Argmax of similarity (default) or the literal least-similar class.
    pub label_rule: LabelRule,
    pub label_refresh: LabelRefresh,
    /// Start the adjustable band above the zero modes instead of at row 0.
    pub band_excludes_zero_modes: bool,
    /// Eigenmap dimension of the spectral descriptor.
    pub descriptor_dim: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta1: 0.3,
            beta2: 1000.0,
            beta3: 3.0,
            m_band: 100,
            lr: 1e-4,
            batch_size: 32,
            input_steps_per_cycle: 4,
            model_steps_per_cycle: 1,
            total_steps: 10,
            toggles: Toggles::default(),
            graph: GraphConfig::default(),
            seed: 0,
            adapt_scope: AdaptScope::All,
            label_rule: LabelRule::ArgmaxSim,
            label_refresh: LabelRefresh::EveryStep,
            band_excludes_zero_modes: false,
            descriptor_dim: 32,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidInput(format!(
                "alpha must be in [0,1], got {}",
                self.alpha
            )));
        }
        for (name, v) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("beta3", self.beta3),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidInput(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be >= 1".into()));
        }
        if self.m_band == 0 {
            return Err(Error::InvalidInput("m_band must be >= 1".into()));
        }
        if self.descriptor_dim == 0 {
            return Err(Error::InvalidInput("descriptor_dim must be >= 1".into()));
        }
        let cycle = self.input_steps_per_cycle + self.model_steps_per_cycle;
        if cycle == 0 {
            return Err(Error::InvalidInput(
                "cycle must contain at least one step".into(),
            ));
        }
        if self.total_steps > 0 && self.total_steps < cycle {
            return Err(Error::InvalidInput(format!(
                "total_steps {} below one cycle ({cycle})",
                self.total_steps
            )));
        }
        Ok(())
    }

    /// True when the configuration performs no adaptation at all.
    pub fn is_noop(&self) -> bool {
        self.total_steps == 0 || (!self.toggles.enable_gsdps && !self.toggles.enable_gsgma)
    }
}

/// A cloud after per-batch preparation: re-centered input, the adjustable
/// slice of the eigenbasis, the GFT coefficients and the spectral
/// descriptor. The graph itself is dropped once the spectrum is known.
#[derive(Debug, Clone)]
pub struct PreparedCloud {
    pub cloud: PointCloud,
    /// Columns `band_start .. band_start + m_band` of the eigenbasis.
    pub band: Array2<f64>,
    pub band_start: usize,
    pub coeffs: SpectralCoefficients,
    pub descriptor: Array1<f64>,
    pub n_zero: usize,
    pub n_outliers: usize,
}

/// Builds [`PreparedCloud`]s in parallel, preserving input order.
pub fn prepare_clouds(clouds: &[PointCloud], cfg: &AdaptConfig) -> Result<Vec<PreparedCloud>> {
    clouds
        .par_iter()
        .map(|cloud| prepare_cloud(cloud, cfg))
        .collect()
}

fn prepare_cloud(cloud: &PointCloud, cfg: &AdaptConfig) -> Result<PreparedCloud> {
    let centered = cloud.recentered();
    let graph = build_outlier_aware_graph(&centered, &cfg.graph)?;
    let n_outliers = graph.n_outliers();
    let basis = spectral::eigendecompose(&spectral::laplacian(&graph))?;
    let band_start = if cfg.band_excludes_zero_modes {
        basis.n_zero()
    } else {
        0
    };
    let n = centered.n_points();
    if band_start + cfg.m_band >= n {
        return Err(Error::Dimension(format!(
            "band {band_start}..{} needs N > {}, cloud has {n} points",
            band_start + cfg.m_band,
            band_start + cfg.m_band
        )));
    }
    if basis.n_zero() + cfg.descriptor_dim > n {
        return Err(Error::Dimension(format!(
            "descriptor needs {} + {} <= {n}",
            basis.n_zero(),
            cfg.descriptor_dim
        )));
    }
    let coeffs = spectral::gft(&centered, &basis)?;
    let descriptor = spectral::spectral_descriptor(&basis, cfg.descriptor_dim)?.values;
    let band = basis
        .eigenvectors()
        .slice(s![.., band_start..band_start + cfg.m_band])
        .to_owned();
    Ok(PreparedCloud {
        cloud: centered,
        band,
        band_start,
        coeffs,
        descriptor,
        n_zero: basis.n_zero(),
        n_outliers,
    })
}

impl PreparedCloud {
    /// Current shifted cloud `X + U_band * delta`.
    pub fn shifted(&self, adj: &SpectralAdjustment) -> Result<PointCloud> {
        if adj.m() != self.band.ncols() {
            return Err(Error::Dimension(format!(
                "adjustment has {} rows, band has {}",
                adj.m(),
                self.band.ncols()
            )));
        }
        let shift = self.band.dot(adj.delta());
        PointCloud::new(self.cloud.points() + &shift, self.cloud.label())
    }
}

/// Per-cloud adjustment with its own AdamW moments.
#[derive(Debug, Clone)]
pub struct AdjustState {
    pub adjustment: SpectralAdjustment,
    moment1: Array2<f64>,
    moment2: Array2<f64>,
    pub steps: u64,
}

impl AdjustState {
    fn new(m: usize) -> Self {
        Self {
            adjustment: SpectralAdjustment::zeros(m),
            moment1: Array2::zeros((m, 3)),
            moment2: Array2::zeros((m, 3)),
            steps: 0,
        }
    }

    fn step(&mut self, grad: &Array2<f64>, lr: f64) -> Result<()> {
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "adjustment step refused: non-finite gradient".into(),
            ));
        }
        nn::adamw_inplace(
            self.adjustment.delta_mut().as_slice_mut().unwrap(),
            self.moment1.as_slice_mut().unwrap(),
            self.moment2.as_slice_mut().unwrap(),
            grad.as_slice().unwrap(),
            lr,
            0.0,
            self.steps + 1,
        );
        self.steps += 1;
        if self.adjustment.delta().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "adjustment became non-finite after step".into(),
            ));
        }
        Ok(())
    }
}

/// Which stage a diagnostics line belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Input,
    Model,
}

/// One executed gradient step.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StepDiag {
    pub step: usize,
    pub kind: StepKind,
    pub loss: LossParts,
    pub objective: f64,
    /// Fraction of pseudo-labels agreeing with ground truth, when labels
    /// exist.
    pub label_agreement: Option<f64>,
}

/// Outcome of adapting one batch.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BatchReport {
    pub batch_index: usize,
    pub batch_size: usize,
    pub input_steps: u64,
    pub model_steps: u64,
    pub diagnostics: Vec<StepDiag>,
    pub predictions: Vec<usize>,
    pub accuracy: Option<f64>,
}

fn batch_descriptors(
    traces: &[ForwardTrace],
    prepared: &[PreparedCloud],
) -> Result<BatchDescriptors> {
    let b = traces.len();
    let c = traces[0].probabilities.len();
    let dd = traces[0].deep_descriptor.len();
    let ds = prepared[0].descriptor.len();
    let mut deep = Array2::zeros((b, dd));
    let mut spec = Array2::zeros((b, ds));
    let mut probs = Array2::zeros((b, c));
    for i in 0..b {
        deep.row_mut(i).assign(&traces[i].deep_descriptor);
        spec.row_mut(i).assign(&prepared[i].descriptor);
        probs.row_mut(i).assign(&traces[i].probabilities);
    }
    BatchDescriptors::new(deep, spec, probs)
}

fn make_labels(
    traces: &[ForwardTrace],
    prepared: &[PreparedCloud],
    cfg: &AdaptConfig,
) -> Result<PseudoLabels> {
    let batch = batch_descriptors(traces, prepared)?;
    let centroids = selftrain::compute_centroids(&batch);
    let alpha_eff = if cfg.toggles.eigenmap_guided {
        cfg.alpha
    } else {
        1.0
    };
    selftrain::pseudo_label(&batch, &centroids, alpha_eff, cfg.label_rule)
}

fn agreement(labels: &[usize], prepared: &[PreparedCloud]) -> Option<f64> {
    let mut hits = 0usize;
    for (l, p) in labels.iter().zip(prepared) {
        match p.cloud.label() {
            Some(gt) => {
                if *l == gt {
                    hits += 1;
                }
            }
            None => return None,
        }
    }
    Some(hits as f64 / labels.len() as f64)
}

/// Batch input-adaptation objective at fixed pseudo-labels: value only.
/// Losses are batch means; the divergence term is inherently batch-level.
pub fn batch_input_loss(
    model: &ClassifierState,
    prepared: &[PreparedCloud],
    adjustments: &[SpectralAdjustment],
    labels: &[usize],
    cfg: &AdaptConfig,
) -> Result<(LossParts, f64)> {
    let b = prepared.len();
    let shifted: Vec<PointCloud> = prepared
        .par_iter()
        .zip(adjustments)
        .map(|(p, a)| p.shifted(a))
        .collect::<Result<_>>()?;
    let traces: Vec<ForwardTrace> = shifted
        .par_iter()
        .map(|c| model.forward(c))
        .collect::<Result<_>>()?;
    let mut probs = Array2::zeros((b, model.n_classes));
    for (i, t) in traces.iter().enumerate() {
        probs.row_mut(i).assign(&t.probabilities);
    }
    let mut pl = 0.0;
    let mut ent = 0.0;
    let mut cd = 0.0;
    for i in 0..b {
        pl += selftrain::loss_pl(&traces[i].probabilities, labels[i]) / b as f64;
        ent += selftrain::loss_ent(&traces[i].probabilities) / b as f64;
        cd += selftrain::loss_cd(prepared[i].cloud.points(), shifted[i].points()) / b as f64;
    }
    let div = selftrain::loss_div(&probs);
    let parts = LossParts { pl, ent, div, cd };
    let value = selftrain::loss_input_adaptation(&parts, cfg.beta1, cfg.beta2);
    Ok((parts, value))
}

/// Batch input objective with gradients for every cloud's adjustment:
/// the classifier path `U_band^T dL/dX_s` plus the Chamfer path.
pub fn batch_input_loss_and_grads(
    model: &ClassifierState,
    prepared: &[PreparedCloud],
    adjustments: &[SpectralAdjustment],
    labels: &[usize],
    cfg: &AdaptConfig,
) -> Result<(LossParts, f64, Vec<Array2<f64>>)> {
    let b = prepared.len();
    let bf = b as f64;
    let shifted: Vec<PointCloud> = prepared
        .par_iter()
        .zip(adjustments)
        .map(|(p, a)| p.shifted(a))
        .collect::<Result<_>>()?;
    let traces: Vec<ForwardTrace> = shifted
        .par_iter()
        .map(|c| model.forward(c))
        .collect::<Result<_>>()?;
    let mut probs = Array2::zeros((b, model.n_classes));
    for (i, t) in traces.iter().enumerate() {
        probs.row_mut(i).assign(&t.probabilities);
    }
    let div = selftrain::loss_div(&probs);
    let div_grads = selftrain::grad_div_logits(&probs);

    let per_cloud: Vec<(f64, f64, f64, Array2<f64>)> = (0..b)
        .into_par_iter()
        .map(|i| {
            let p = &traces[i].probabilities;
            let pl_i = selftrain::loss_pl(p, labels[i]);
            let ent_i = selftrain::loss_ent(p);
            // d(batch objective)/dz_i
            let logit_grad = (selftrain::grad_pl_logits(p, labels[i])
                + selftrain::grad_ent_logits(p) * cfg.beta1)
                / bf
                + &(div_grads.row(i).to_owned() * cfg.beta1);
            let (_, d_input) = model.backward(&traces[i], &logit_grad)?;
            let (cd_i, cd_grad) =
                selftrain::loss_cd_with_grad(prepared[i].cloud.points(), shifted[i].points());
            let total_input_grad = d_input + &(cd_grad * (cfg.beta2 / bf));
            let adj_grad = prepared[i].band.t().dot(&total_input_grad);
            Ok((pl_i, ent_i, cd_i, adj_grad))
        })
        .collect::<Result<_>>()?;

    let mut pl = 0.0;
    let mut ent = 0.0;
    let mut cd = 0.0;
    let mut grads = Vec::with_capacity(b);
    for (pl_i, ent_i, cd_i, g) in per_cloud {
        pl += pl_i / bf;
        ent += ent_i / bf;
        cd += cd_i / bf;
        grads.push(g);
    }
    let parts = LossParts { pl, ent, div, cd };
    let value = selftrain::loss_input_adaptation(&parts, cfg.beta1, cfg.beta2);
    Ok((parts, value, grads))
}

/// Batch model-adaptation objective at fixed pseudo-labels: value only.
pub fn batch_model_loss(
    model: &ClassifierState,
    prepared: &[PreparedCloud],
    adjustments: &[SpectralAdjustment],
    labels: &[usize],
    cfg: &AdaptConfig,
) -> Result<(LossParts, f64)> {
    let (parts, _) = batch_input_loss(model, prepared, adjustments, labels, cfg)?;
    let value = selftrain::loss_model_adaptation(&parts, cfg.beta3);
    Ok((parts, value))
}

/// Batch model objective with the accumulated parameter gradient.
pub fn batch_model_loss_and_grads(
    model: &ClassifierState,
    prepared: &[PreparedCloud],
    adjustments: &[SpectralAdjustment],
    labels: &[usize],
    cfg: &AdaptConfig,
) -> Result<(LossParts, f64, ParamGrads)> {
    let b = prepared.len();
    let bf = b as f64;
    let shifted: Vec<PointCloud> = prepared
        .par_iter()
        .zip(adjustments)
        .map(|(p, a)| p.shifted(a))
        .collect::<Result<_>>()?;
    let traces: Vec<ForwardTrace> = shifted
        .par_iter()
        .map(|c| model.forward(c))
        .collect::<Result<_>>()?;
    let mut probs = Array2::zeros((b, model.n_classes));
    for (i, t) in traces.iter().enumerate() {
        probs.row_mut(i).assign(&t.probabilities);
    }
    let div = selftrain::loss_div(&probs);
    let div_grads = selftrain::grad_div_logits(&probs);

    let per_cloud: Vec<(f64, f64, f64, ParamGrads)> = (0..b)
        .into_par_iter()
        .map(|i| {
            let p = &traces[i].probabilities;
            let pl_i = selftrain::loss_pl(p, labels[i]);
            let ent_i = selftrain::loss_ent(p);
            let cd_i = selftrain::loss_cd(prepared[i].cloud.points(), shifted[i].points());
            let logit_grad = (selftrain::grad_pl_logits(p, labels[i])
                + selftrain::grad_ent_logits(p) * cfg.beta3)
                / bf
                + &(div_grads.row(i).to_owned() * cfg.beta3);
            let (grads, _) = model.backward(&traces[i], &logit_grad)?;
            Ok((pl_i, ent_i, cd_i, grads))
        })
        .collect::<Result<_>>()?;

    let mut pl = 0.0;
    let mut ent = 0.0;
    let mut cd = 0.0;
    let mut total = ParamGrads::zeros_like(model);
    for (pl_i, ent_i, cd_i, g) in &per_cloud {
        pl += pl_i / bf;
        ent += ent_i / bf;
        cd += cd_i / bf;
        total.accumulate(g);
    }
    let parts = LossParts { pl, ent, div, cd };
    let value = selftrain::loss_model_adaptation(&parts, cfg.beta3);
    Ok((parts, value, total))
}

/// Adapts one batch in place and returns per-cloud predictions and the
/// step-by-step report. With both components disabled (or zero steps) this
/// is exactly source-only inference on the re-centered clouds.
pub fn adapt_batch(
    clouds: &[PointCloud],
    model: &mut ClassifierState,
    cfg: &AdaptConfig,
) -> Result<BatchReport> {
    cfg.validate()?;
    if clouds.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if cfg.is_noop() {
        let centered: Vec<PointCloud> = clouds.iter().map(|c| c.recentered()).collect();
        let predictions = model.classify(&centered)?;
        let accuracy = accuracy_against_labels(&predictions, clouds);
        return Ok(BatchReport {
            batch_index: 0,
            batch_size: clouds.len(),
            input_steps: 0,
            model_steps: 0,
            diagnostics: Vec::new(),
            predictions,
            accuracy,
        });
    }
    let prepared = prepare_clouds(clouds, cfg)?;
    adapt_batch_prepared(&prepared, model, cfg)
}

/// Adapts a batch that has already been prepared; used by the streaming
/// and ablation drivers so preparation can be shared.
pub fn adapt_batch_prepared(
    prepared: &[PreparedCloud],
    model: &mut ClassifierState,
    cfg: &AdaptConfig,
) -> Result<BatchReport> {
    cfg.validate()?;
    let b = prepared.len();
    if b == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if cfg.is_noop() {
        let centered: Vec<PointCloud> = prepared.iter().map(|p| p.cloud.clone()).collect();
        let predictions = model.classify(&centered)?;
        let accuracy = accuracy_against_prepared(&predictions, prepared);
        return Ok(BatchReport {
            batch_index: 0,
            batch_size: b,
            input_steps: 0,
            model_steps: 0,
            diagnostics: Vec::new(),
            predictions,
            accuracy,
        });
    }

    let mut adjust: Vec<AdjustState> = (0..b).map(|_| AdjustState::new(cfg.m_band)).collect();
    let mut diagnostics = Vec::with_capacity(cfg.total_steps);
    let cycle = cfg.input_steps_per_cycle + cfg.model_steps_per_cycle;
    let mut labels: Option<Vec<usize>> = None;
    let mut labels_cycle = usize::MAX;
    let mut model_steps_taken = 0u64;

    for step in 0..cfg.total_steps {
        let pos = step % cycle;
        let is_input = pos < cfg.input_steps_per_cycle;
        if is_input && !cfg.toggles.enable_gsdps {
            continue;
        }
        if !is_input && !cfg.toggles.enable_gsgma {
            continue;
        }

        // pseudo-labels from the clouds the model currently sees
        let this_cycle = step / cycle;
        let refresh = match cfg.label_refresh {
            LabelRefresh::EveryStep => true,
            LabelRefresh::PerCycle => labels_cycle != this_cycle,
        };
        if refresh || labels.is_none() {
            let shifted: Vec<PointCloud> = prepared
                .par_iter()
                .zip(&adjust)
                .map(|(p, a)| p.shifted(&a.adjustment))
                .collect::<Result<_>>()?;
            let traces: Vec<ForwardTrace> = shifted
                .par_iter()
                .map(|c| model.forward(c))
                .collect::<Result<_>>()?;
            labels = Some(make_labels(&traces, prepared, cfg)?.labels);
            labels_cycle = this_cycle;
        }
        let current_labels = labels.as_ref().expect("labels computed").clone();

        let adjustments: Vec<SpectralAdjustment> =
            adjust.iter().map(|a| a.adjustment.clone()).collect();
        if is_input {
            let (parts, objective, grads) =
                batch_input_loss_and_grads(model, prepared, &adjustments, &current_labels, cfg)?;
            if !objective.is_finite() {
                return Err(Error::Numeric(format!(
                    "input adaptation diverged at step {step}: {parts:?}"
                )));
            }
            for (a, g) in adjust.iter_mut().zip(&grads) {
                a.step(g, cfg.lr)?;
            }
            diagnostics.push(StepDiag {
                step,
                kind: StepKind::Input,
                loss: parts,
                objective,
                label_agreement: agreement(&current_labels, prepared),
            });
        } else {
            let (parts, objective, grads) =
                batch_model_loss_and_grads(model, prepared, &adjustments, &current_labels, cfg)?;
            if !objective.is_finite() {
                return Err(Error::Numeric(format!(
                    "model adaptation diverged at step {step}: {parts:?}"
                )));
            }
            model.adamw_step_scoped(&grads, cfg.lr, 0.0, cfg.adapt_scope)?;
            model_steps_taken += 1;
            diagnostics.push(StepDiag {
                step,
                kind: StepKind::Model,
                loss: parts,
                objective,
                label_agreement: agreement(&current_labels, prepared),
            });
        }
    }

    // final predictions on the adapted clouds with the adapted model
    let shifted: Vec<PointCloud> = prepared
        .par_iter()
        .zip(&adjust)
        .map(|(p, a)| p.shifted(&a.adjustment))
        .collect::<Result<_>>()?;
    let predictions = model.classify(&shifted)?;
    let accuracy = accuracy_against_prepared(&predictions, prepared);
    Ok(BatchReport {
        batch_index: 0,
        batch_size: b,
        input_steps: adjust.first().map(|a| a.steps).unwrap_or(0),
        model_steps: model_steps_taken,
        diagnostics,
        predictions,
        accuracy,
    })
}

fn accuracy_against_labels(predictions: &[usize], clouds: &[PointCloud]) -> Option<f64> {
    let mut hits = 0usize;
    for (p, c) in predictions.iter().zip(clouds) {
        match c.label() {
            Some(l) => {
                if *p == l {
                    hits += 1;
                }
            }
            None => return None,
        }
    }
    Some(hits as f64 / predictions.len() as f64)
}

fn accuracy_against_prepared(predictions: &[usize], prepared: &[PreparedCloud]) -> Option<f64> {
    let mut hits = 0usize;
    for (p, c) in predictions.iter().zip(prepared) {
        match c.cloud.label() {
            Some(l) => {
                if *p == l {
                    hits += 1;
                }
            }
            None => return None,
        }
    }
    Some(hits as f64 / predictions.len() as f64)
}

/// Online streaming report: batches in manifest order, model state
/// carrying over from batch to batch.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StreamReport {
    pub batches: Vec<BatchReport>,
    pub predictions: Vec<usize>,
    pub accuracy: Option<f64>,
}

/// Adapts a stream of clouds in batches of `cfg.batch_size`, carrying the
/// model state across batches. A short final batch is processed at its
/// actual size.
pub fn adapt_stream(
    clouds: &[PointCloud],
    model: &mut ClassifierState,
    cfg: &AdaptConfig,
) -> Result<StreamReport> {
    cfg.validate()?;
    if clouds.is_empty() {
        return Err(Error::InvalidInput("empty stream".into()));
    }
    let mut batches = Vec::new();
    let mut predictions = Vec::with_capacity(clouds.len());
    for (index, chunk) in clouds.chunks(cfg.batch_size).enumerate() {
        let mut report = adapt_batch(chunk, model, cfg)?;
        report.batch_index = index;
        predictions.extend(report.predictions.iter().copied());
        batches.push(report);
    }
    let accuracy = accuracy_against_labels(&predictions, clouds);
    Ok(StreamReport {
        batches,
        predictions,
        accuracy,
    })
}

/// The five standard ablation variants.
pub fn standard_variants() -> Vec<(String, Toggles)> {
    vec![
        (
            "source_only".into(),
            Toggles {
                enable_gsdps: false,
                enable_gsgma: false,
                eigenmap_guided: false,
            },
        ),
        (
            "gsgma_only".into(),
            Toggles {
                enable_gsdps: false,
                enable_gsgma: true,
                eigenmap_guided: true,
            },
        ),
        (
            "gsdps_only".into(),
            Toggles {
                enable_gsdps: true,
                enable_gsgma: false,
                eigenmap_guided: true,
            },
        ),
        (
            "deep_feature_guided".into(),
            Toggles {
                enable_gsdps: true,
                enable_gsgma: true,
                eigenmap_guided: false,
            },
        ),
        ("full".into(), Toggles::default()),
    ]
}

/// One ablation row: per-corruption accuracies plus their mean.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub per_corruption: Vec<CorruptionAccuracy>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CorruptionAccuracy {
    pub corruption: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

/// Runs the requested variants over a corrupted test set grouped by
/// corruption kind. Per kind and per variant the model is reset to the
/// source checkpoint; graph preparation is shared across variants batch by
/// batch, which is sound because preparation is a pure function of the
/// cloud and the shared graph configuration.
pub fn ablation_suite(
    model: &ClassifierState,
    corrupted: &[(String, Vec<PointCloud>)],
    cfg: &AdaptConfig,
    variants: &[(String, Toggles)],
) -> Result<AblationTable> {
    cfg.validate()?;
    let mut hits: Vec<Vec<usize>> = vec![Vec::new(); variants.len()];
    let mut totals: Vec<Vec<usize>> = vec![Vec::new(); variants.len()];
    for v in 0..variants.len() {
        hits[v] = vec![0; corrupted.len()];
        totals[v] = vec![0; corrupted.len()];
    }
    for (k, (_, clouds)) in corrupted.iter().enumerate() {
        if clouds.is_empty() {
            return Err(Error::InvalidInput("empty corruption group".into()));
        }
        let mut models: Vec<ClassifierState> =
            variants.iter().map(|_| model.clone()).collect();
        let any_adapting = variants.iter().any(|(_, t)| {
            let c = AdaptConfig {
                toggles: *t,
                ..cfg.clone()
            };
            !c.is_noop()
        });
        for chunk in clouds.chunks(cfg.batch_size) {
            let prepared = if any_adapting {
                Some(prepare_clouds(chunk, cfg)?)
            } else {
                None
            };
            for (v, (_, toggles)) in variants.iter().enumerate() {
                let vcfg = AdaptConfig {
                    toggles: *toggles,
                    ..cfg.clone()
                };
                let report = match (&prepared, vcfg.is_noop()) {
                    (Some(p), false) => adapt_batch_prepared(p, &mut models[v], &vcfg)?,
                    (Some(p), true) => adapt_batch_prepared(p, &mut models[v], &vcfg)?,
                    (None, _) => adapt_batch(chunk, &mut models[v], &vcfg)?,
                };
                for (pred, cloud) in report.predictions.iter().zip(chunk) {
                    let label = cloud.label().ok_or_else(|| {
                        Error::InvalidInput("ablation requires labeled clouds".into())
                    })?;
                    totals[v][k] += 1;
                    if *pred == label {
                        hits[v][k] += 1;
                    }
                }
            }
        }
    }
    let rows = variants
        .iter()
        .enumerate()
        .map(|(v, (name, _))| {
            let per_corruption: Vec<CorruptionAccuracy> = corrupted
                .iter()
                .enumerate()
                .map(|(k, (kind, _))| CorruptionAccuracy {
                    corruption: kind.clone(),
                    accuracy: hits[v][k] as f64 / totals[v][k] as f64,
                })
                .collect();
            let mean_accuracy = per_corruption.iter().map(|c| c.accuracy).sum::<f64>()
                / per_corruption.len() as f64;
            AblationRow {
                variant: name.clone(),
                per_corruption,
                mean_accuracy,
            }
        })
        .collect();
    Ok(AblationTable { rows })
}

/// Renders the per-step diagnostics of a stream as CSV.
pub fn diagnostics_csv(report: &StreamReport) -> String {
    let mut out = String::from("batch,step,kind,loss_pl,loss_ent,loss_div,loss_cd,agreement\n");
    for batch in &report.batches {
        for d in &batch.diagnostics {
            let kind = match d.kind {
                StepKind::Input => "input",
                StepKind::Model => "model",
            };
            let agreement = d
                .label_agreement
                .map(|a| format!("{a:.6}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{:.9e},{:.9e},{:.9e},{:.9e},{}\n",
                batch.batch_index, d.step, kind, d.loss.pl, d.loss.ent, d.loss.div, d.loss.cd,
                agreement
            ));
        }
    }
    out
}
