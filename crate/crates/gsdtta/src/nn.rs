//! Compact differentiable point classifier.
//!
//! A per-point MLP (3 -> 64 -> 128, ReLU) max-pooled over points into a
//! global deep descriptor, followed by a small head (128 -> 64 -> C).
//! Forward is permutation-invariant; backward produces exact reverse-mode
//! gradients with respect to both parameters and input coordinates, the
//! latter routed through the max-pool to the argmax points only. Everything
//! is f64: the gradient and Parseval checks downstream run at 1e-8..1e-9
//! tolerances.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pointcloud::{mix_seed, PointCloud};

pub const INPUT_DIM: usize = 3;
pub const HIDDEN1: usize = 64;
/// Width of the global deep descriptor.
pub const DESCRIPTOR_DIM: usize = 128;
pub const HIDDEN3: usize = 64;

const CHECKPOINT_MAGIC: &[u8; 4] = b"GSTC";
const CHECKPOINT_VERSION: u32 = 1;

/// Which parameters an optimizer step updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptScope {
    All,
    HeadOnly,
}

/// Parameter tensors plus AdamW moment buffers and the step counter.
///
/// The architecture is fixed at construction. Forward passes on a shared
/// state are safe concurrently; optimizer steps need exclusive access.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierState {
    pub n_classes: usize,
    pub params: Tensors,
    pub moment1: Tensors,
    pub moment2: Tensors,
    pub step: u64,
}

/// The eight parameter tensors of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    pub w1: Array2<f64>, // HIDDEN1 x 3
    pub b1: Array1<f64>,
    pub w2: Array2<f64>, // DESCRIPTOR_DIM x HIDDEN1
    pub b2: Array1<f64>,
    pub w3: Array2<f64>, // HIDDEN3 x DESCRIPTOR_DIM
    pub b3: Array1<f64>,
    pub w4: Array2<f64>, // C x HIDDEN3
    pub b4: Array1<f64>,
}

impl Tensors {
    fn zeros(n_classes: usize) -> Self {
        Self {
            w1: Array2::zeros((HIDDEN1, INPUT_DIM)),
            b1: Array1::zeros(HIDDEN1),
            w2: Array2::zeros((DESCRIPTOR_DIM, HIDDEN1)),
            b2: Array1::zeros(DESCRIPTOR_DIM),
            w3: Array2::zeros((HIDDEN3, DESCRIPTOR_DIM)),
            b3: Array1::zeros(HIDDEN3),
            w4: Array2::zeros((n_classes, HIDDEN3)),
            b4: Array1::zeros(n_classes),
        }
    }

    fn for_each_tensor(&self, mut f: impl FnMut(&[f64])) {
        f(self.w1.as_slice().unwrap());
        f(self.b1.as_slice().unwrap());
        f(self.w2.as_slice().unwrap());
        f(self.b2.as_slice().unwrap());
        f(self.w3.as_slice().unwrap());
        f(self.b3.as_slice().unwrap());
        f(self.w4.as_slice().unwrap());
        f(self.b4.as_slice().unwrap());
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_tensor(|t| ok &= t.iter().all(|v| v.is_finite()));
        ok
    }
}

/// Gradients aligned with [`Tensors`].
pub type ParamGrads = Tensors;

impl ParamGrads {
    pub fn zeros_like(state: &ClassifierState) -> Self {
        Tensors::zeros(state.n_classes)
    }

    /// Element-wise accumulation; used for sequential batch reduction.
    pub fn accumulate(&mut self, other: &ParamGrads) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += &other.b2;
        self.w3 += &other.w3;
        self.b3 += &other.b3;
        self.w4 += &other.w4;
        self.b4 += &other.b4;
    }
}

/// Cached forward pass: outputs plus the activations backward needs.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Array1<f64>,
    pub probabilities: Array1<f64>,
    pub deep_descriptor: Array1<f64>,
    input: Array2<f64>,
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    argmax: Vec<usize>,
    z3: Array1<f64>,
    a3: Array1<f64>,
    step_stamp: u64,
}

impl ForwardTrace {
    /// Predicted class: argmax probability, ties to the lower index.
    pub fn prediction(&self) -> usize {
        argmax(&self.probabilities)
    }
}

fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &x) in v.iter().enumerate() {
        if x > best_v {
            best_v = x;
            best = i;
        }
    }
    best
}

fn check_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "non-finite activation in layer {name}"
        )))
    }
}

impl ClassifierState {
    /// He-initialized classifier; biases start at zero.
    pub fn new(n_classes: usize, seed: u64) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 classes, got {n_classes}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x6e6e));
        let mut init = |rows: usize, cols: usize| -> Array2<f64> {
            let scale = (2.0 / cols as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || scale * normal(&mut rng))
        };
        let params = Tensors {
            w1: init(HIDDEN1, INPUT_DIM),
            b1: Array1::zeros(HIDDEN1),
            w2: init(DESCRIPTOR_DIM, HIDDEN1),
            b2: Array1::zeros(DESCRIPTOR_DIM),
            w3: init(HIDDEN3, DESCRIPTOR_DIM),
            b3: Array1::zeros(HIDDEN3),
            w4: init(n_classes, HIDDEN3),
            b4: Array1::zeros(n_classes),
        };
        Ok(Self {
            n_classes,
            params,
            moment1: Tensors::zeros(n_classes),
            moment2: Tensors::zeros(n_classes),
            step: 0,
        })
    }

    /// Forward pass. The deep descriptor is the per-feature max over
    /// points, so the output is invariant to point order.
    pub fn forward(&self, cloud: &PointCloud) -> Result<ForwardTrace> {
        let x = cloud.points();
        let n = x.nrows();
        let p = &self.params;

        let mut z1 = x.dot(&p.w1.t());
        for mut row in z1.rows_mut() {
            row += &p.b1;
        }
        check_finite("pointwise1", z1.as_slice().unwrap())?;
        let a1 = z1.mapv(|v| v.max(0.0));

        let mut z2 = a1.dot(&p.w2.t());
        for mut row in z2.rows_mut() {
            row += &p.b2;
        }
        check_finite("pointwise2", z2.as_slice().unwrap())?;

        // max-pool over points on relu(z2); ties resolve to the lowest
        // point index via strict improvement
        let mut deep = Array1::from_elem(DESCRIPTOR_DIM, f64::NEG_INFINITY);
        let mut argmax_idx = vec![0usize; DESCRIPTOR_DIM];
        for i in 0..n {
            for j in 0..DESCRIPTOR_DIM {
                let v = z2[[i, j]].max(0.0);
                if v > deep[j] {
                    deep[j] = v;
                    argmax_idx[j] = i;
                }
            }
        }
        check_finite("maxpool", deep.as_slice().unwrap())?;

        let z3 = p.w3.dot(&deep) + &p.b3;
        check_finite("head1", z3.as_slice().unwrap())?;
        let a3 = z3.mapv(|v| v.max(0.0));
        let logits = p.w4.dot(&a3) + &p.b4;
        check_finite("head2", logits.as_slice().unwrap())?;

        let probabilities = softmax(&logits);

        Ok(ForwardTrace {
            logits,
            probabilities,
            deep_descriptor: deep,
            input: x.clone(),
            z1,
            a1,
            z2,
            argmax: argmax_idx,
            z3,
            a3,
            step_stamp: self.step,
        })
    }

    /// Reverse-mode gradients of a scalar loss given its gradient with
    /// respect to the logits. Returns parameter gradients and the gradient
    /// with respect to the input coordinates; the latter is nonzero only at
    /// points selected by the max-pool.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        loss_grad: &Array1<f64>,
    ) -> Result<(ParamGrads, Array2<f64>)> {
        if trace.step_stamp != self.step {
            return Err(Error::InvalidInput(format!(
                "stale trace: produced at step {}, state is at step {}",
                trace.step_stamp, self.step
            )));
        }
        if loss_grad.len() != self.n_classes {
            return Err(Error::Dimension(format!(
                "loss gradient has {} entries, expected {}",
                loss_grad.len(),
                self.n_classes
            )));
        }
        let p = &self.params;
        let n = trace.input.nrows();
        let mut grads = ParamGrads::zeros_like(self);

        // head
        let g4 = loss_grad;
        for c in 0..self.n_classes {
            for j in 0..HIDDEN3 {
                grads.w4[[c, j]] = g4[c] * trace.a3[j];
            }
        }
        grads.b4.assign(g4);
        let da3 = p.w4.t().dot(g4);
        let dz3 =
            Array1::from_shape_fn(HIDDEN3, |j| if trace.z3[j] > 0.0 { da3[j] } else { 0.0 });
        for j in 0..HIDDEN3 {
            for k in 0..DESCRIPTOR_DIM {
                grads.w3[[j, k]] = dz3[j] * trace.deep_descriptor[k];
            }
        }
        grads.b3.assign(&dz3);
        let d_deep = p.w3.t().dot(&dz3);

        // through the max-pool: only the argmax point of each feature
        // receives gradient. Group features by their source point.
        let mut per_point: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (j, &i) in trace.argmax.iter().enumerate() {
            per_point[i].push(j);
        }
        let mut d_input = Array2::zeros((n, INPUT_DIM));
        for (i, features) in per_point.iter().enumerate() {
            if features.is_empty() {
                continue;
            }
            // dz2 restricted to row i
            let mut da1_row = Array1::<f64>::zeros(HIDDEN1);
            for &j in features {
                let g = if trace.z2[[i, j]] > 0.0 { d_deep[j] } else { 0.0 };
                if g == 0.0 {
                    continue;
                }
                grads.b2[j] += g;
                for k in 0..HIDDEN1 {
                    grads.w2[[j, k]] += g * trace.a1[[i, k]];
                    da1_row[k] += g * p.w2[[j, k]];
                }
            }
            // through relu of layer 1 on row i
            for k in 0..HIDDEN1 {
                if trace.z1[[i, k]] <= 0.0 {
                    continue;
                }
                let g = da1_row[k];
                if g == 0.0 {
                    continue;
                }
                grads.b1[k] += g;
                for a in 0..INPUT_DIM {
                    grads.w1[[k, a]] += g * trace.input[[i, a]];
                    d_input[[i, a]] += g * p.w1[[k, a]];
                }
            }
        }
        Ok((grads, d_input))
    }

    /// One AdamW step with beta = (0.9, 0.999), eps = 1e-8, bias
    /// correction and decoupled weight decay. Refuses non-finite gradients
    /// without touching the state.
    pub fn adamw_step(&mut self, grads: &ParamGrads, lr: f64, weight_decay: f64) -> Result<()> {
        self.adamw_step_scoped(grads, lr, weight_decay, AdaptScope::All)
    }

    /// AdamW step restricted to a parameter scope. `HeadOnly` leaves the
    /// per-point MLP and its moments untouched.
    pub fn adamw_step_scoped(
        &mut self,
        grads: &ParamGrads,
        lr: f64,
        weight_decay: f64,
        scope: AdaptScope,
    ) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::Numeric(
                "optimizer step refused: non-finite gradient".into(),
            ));
        }
        let t = self.step + 1;
        let wd = weight_decay;
        if scope == AdaptScope::All {
            adamw_inplace(self.params.w1.as_slice_mut().unwrap(), self.moment1.w1.as_slice_mut().unwrap(), self.moment2.w1.as_slice_mut().unwrap(), grads.w1.as_slice().unwrap(), lr, wd, t);
            adamw_inplace(self.params.b1.as_slice_mut().unwrap(), self.moment1.b1.as_slice_mut().unwrap(), self.moment2.b1.as_slice_mut().unwrap(), grads.b1.as_slice().unwrap(), lr, wd, t);
            adamw_inplace(self.params.w2.as_slice_mut().unwrap(), self.moment1.w2.as_slice_mut().unwrap(), self.moment2.w2.as_slice_mut().unwrap(), grads.w2.as_slice().unwrap(), lr, wd, t);
            adamw_inplace(self.params.b2.as_slice_mut().unwrap(), self.moment1.b2.as_slice_mut().unwrap(), self.moment2.b2.as_slice_mut().unwrap(), grads.b2.as_slice().unwrap(), lr, wd, t);
        }
        adamw_inplace(self.params.w3.as_slice_mut().unwrap(), self.moment1.w3.as_slice_mut().unwrap(), self.moment2.w3.as_slice_mut().unwrap(), grads.w3.as_slice().unwrap(), lr, wd, t);
        adamw_inplace(self.params.b3.as_slice_mut().unwrap(), self.moment1.b3.as_slice_mut().unwrap(), self.moment2.b3.as_slice_mut().unwrap(), grads.b3.as_slice().unwrap(), lr, wd, t);
        adamw_inplace(self.params.w4.as_slice_mut().unwrap(), self.moment1.w4.as_slice_mut().unwrap(), self.moment2.w4.as_slice_mut().unwrap(), grads.w4.as_slice().unwrap(), lr, wd, t);
        adamw_inplace(self.params.b4.as_slice_mut().unwrap(), self.moment1.b4.as_slice_mut().unwrap(), self.moment2.b4.as_slice_mut().unwrap(), grads.b4.as_slice().unwrap(), lr, wd, t);
        self.step += 1;
        if !self.params.all_finite() {
            return Err(Error::Numeric(
                "parameters became non-finite after optimizer step".into(),
            ));
        }
        Ok(())
    }

    /// Classifies a batch in parallel; results keep input order.
    pub fn classify(&self, clouds: &[PointCloud]) -> Result<Vec<usize>> {
        clouds
            .par_iter()
            .map(|c| self.forward(c).map(|t| t.prediction()))
            .collect()
    }

    /// Fraction of clouds whose prediction matches their label.
    pub fn accuracy(&self, clouds: &[PointCloud]) -> Result<f64> {
        let preds = self.classify(clouds)?;
        let mut hits = 0usize;
        let mut total = 0usize;
        for (pred, cloud) in preds.iter().zip(clouds) {
            if let Some(label) = cloud.label() {
                total += 1;
                if *pred == label {
                    hits += 1;
                }
            }
        }
        if total == 0 {
            return Err(Error::InvalidInput("no labeled clouds to score".into()));
        }
        Ok(hits as f64 / total as f64)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// The AdamW kernel: beta = (0.9, 0.999), eps = 1e-8, bias correction at
/// step `t` (1-based), decoupled weight decay. Shared by the classifier
/// optimizer and the per-cloud adjustment optimizer.
pub(crate) fn adamw_inplace(
    p: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    g: &[f64],
    lr: f64,
    wd: f64,
    t: u64,
) {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let c1 = 1.0 - BETA1.powi(t as i32);
    let c2 = 1.0 - BETA2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= lr * (m_hat / (v_hat.sqrt() + EPS) + wd * p[i]);
    }
}

/// Numerically stable softmax; the output sums to 1 within roundoff.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

/// Source-training options. The learning rate is free here (source
/// training is setup work, not adaptation); adaptation uses its own
/// configuration.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

/// Per-epoch training log line.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Trains the classifier on labeled clouds with cross-entropy. Deterministic
/// for a fixed seed: per-epoch shuffles are seeded and batch reductions run
/// in input order.
pub fn train_source(
    train: &[PointCloud],
    n_classes: usize,
    opts: &TrainOptions,
) -> Result<(ClassifierState, Vec<EpochStats>)> {
    if opts.epochs == 0 {
        return Err(Error::InvalidInput(
            "no training performed: epochs must be >= 1".into(),
        ));
    }
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    for (i, cloud) in train.iter().enumerate() {
        match cloud.label() {
            Some(l) if l < n_classes => {}
            Some(l) => {
                return Err(Error::InvalidInput(format!(
                    "cloud {i} has label {l} outside 0..{n_classes}"
                )))
            }
            None => {
                return Err(Error::InvalidInput(format!("cloud {i} is unlabeled")));
            }
        }
    }
    let mut state = ClassifierState::new(n_classes, opts.seed)?;
    let mut log = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, 0xe90c + epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(opts.batch_size) {
            let b = chunk.len() as f64;
            // per-cloud forward/backward in parallel, reduced in order
            let results: Vec<(ParamGrads, f64)> = chunk
                .par_iter()
                .map(|&idx| {
                    let cloud = &train[idx];
                    let label = cloud.label().expect("validated");
                    let trace = state.forward(cloud)?;
                    let p = trace.probabilities[label].max(1e-12);
                    let loss = -p.ln();
                    let mut grad = trace.probabilities.clone();
                    grad[label] -= 1.0;
                    grad /= b;
                    let (grads, _) = state.backward(&trace, &grad)?;
                    Ok((grads, loss))
                })
                .collect::<Result<_>>()?;
            let mut total = ParamGrads::zeros_like(&state);
            let mut batch_loss = 0.0;
            for (g, loss) in &results {
                total.accumulate(g);
                batch_loss += loss / b;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged at epoch {epoch}: loss {batch_loss}"
                )));
            }
            state.adamw_step(&total, opts.lr, opts.weight_decay)?;
            epoch_loss += batch_loss;
            batches += 1;
        }
        log.push(EpochStats {
            epoch,
            mean_loss: epoch_loss / batches as f64,
        });
    }
    Ok((state, log))
}

/// Writes a versioned little-endian binary checkpoint.
///
/// Layout: magic `GSTC`, u32 version, u32 dims (input, hidden1,
/// descriptor, hidden3, classes), u64 step, then parameters, first
/// moments and second moments as f64 tensors in declaration order
/// (w1 b1 w2 b2 w3 b3 w4 b4), row-major.
pub fn save_checkpoint(state: &ClassifierState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for dim in [
        INPUT_DIM as u32,
        HIDDEN1 as u32,
        DESCRIPTOR_DIM as u32,
        HIDDEN3 as u32,
        state.n_classes as u32,
    ] {
        buf.extend_from_slice(&dim.to_le_bytes());
    }
    buf.extend_from_slice(&state.step.to_le_bytes());
    for tensors in [&state.params, &state.moment1, &state.moment2] {
        tensors.for_each_tensor(|t| {
            for v in t {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        });
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint, refusing wrong magic, version or architecture.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ClassifierState> {
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    let mut cursor = 0usize;
    fn take<'a>(
        path: &Path,
        buf: &'a [u8],
        cursor: &mut usize,
        len: usize,
    ) -> Result<&'a [u8]> {
        if *cursor + len > buf.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: "checkpoint truncated".into(),
            });
        }
        let s = &buf[*cursor..*cursor + len];
        *cursor += len;
        Ok(s)
    }
    if take(path, &buf, &mut cursor, 4)? != CHECKPOINT_MAGIC {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "not a classifier checkpoint".into(),
        });
    }
    let version = u32::from_le_bytes(take(path, &buf, &mut cursor, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"),
        });
    }
    let mut dims = [0u32; 5];
    for d in dims.iter_mut() {
        *d = u32::from_le_bytes(take(path, &buf, &mut cursor, 4)?.try_into().unwrap());
    }
    if dims[0] as usize != INPUT_DIM
        || dims[1] as usize != HIDDEN1
        || dims[2] as usize != DESCRIPTOR_DIM
        || dims[3] as usize != HIDDEN3
    {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("architecture mismatch: {dims:?}"),
        });
    }
    let n_classes = dims[4] as usize;
    let step = u64::from_le_bytes(take(path, &buf, &mut cursor, 8)?.try_into().unwrap());

    let read_tensors = |cursor: &mut usize| -> Result<Tensors> {
        let mut t = Tensors::zeros(n_classes);
        let fill = |slot: &mut [f64], cursor: &mut usize| -> Result<()> {
            for v in slot.iter_mut() {
                let bytes = take(path, &buf, cursor, 8)?;
                *v = f64::from_le_bytes(bytes.try_into().unwrap());
            }
            Ok(())
        };
        fill(t.w1.as_slice_mut().unwrap(), cursor)?;
        fill(t.b1.as_slice_mut().unwrap(), cursor)?;
        fill(t.w2.as_slice_mut().unwrap(), cursor)?;
        fill(t.b2.as_slice_mut().unwrap(), cursor)?;
        fill(t.w3.as_slice_mut().unwrap(), cursor)?;
        fill(t.b3.as_slice_mut().unwrap(), cursor)?;
        fill(t.w4.as_slice_mut().unwrap(), cursor)?;
        fill(t.b4.as_slice_mut().unwrap(), cursor)?;
        Ok(t)
    };
    let params = read_tensors(&mut cursor)?;
    let moment1 = read_tensors(&mut cursor)?;
    let moment2 = read_tensors(&mut cursor)?;
    if cursor != buf.len() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("trailing bytes in checkpoint: {}", buf.len() - cursor),
        });
    }
    Ok(ClassifierState {
        n_classes,
        params,
        moment1,
        moment2,
        step,
    })
}
