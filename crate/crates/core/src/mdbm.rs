//! Gaussian-Bernoulli RBMs, per-modality two-layer stacks joined by a
//! shared top layer, greedy layer-wise pretraining with contrastive
//! divergence, and fine-tuning of the unrolled stack as a deterministic
//! feed-forward classifier.
//!
//! Energy of one visible/hidden link (σ_i is the per-visible-unit scale):
//!
//! ```text
//! E(v,h) = Σ_i (v_i − b_i)²/(2σ_i²) − Σ_{j,i} h_j W_ji v_i/σ_i − Σ_j b_j h_j
//! ```
//!
//! The joint model over the three modality pathways has probability
//! proportional to Σ_h exp(−V − A − T + J), so the total energy computed
//! here is V + A + T − J, where J is the top-layer coupling term.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{EffectivenessLabel, Modality};
use crate::matrix::Matrix;
use crate::neural::dense::Dense;
use crate::neural::loss::{bce_loss, softmax, softmax_bce_grad};
use crate::neural::{AdamOpt, NeuralError, TensorBag, TrainConfig, INIT_RANGE};
use crate::rng::SplitMix64;

/// Errors specific to Boltzmann-machine construction and training.
#[derive(Debug, Error)]
pub enum MdbmError {
    #[error("shape mismatch in {place}: expected {expected}, got {found}")]
    ShapeMismatch {
        place: &'static str,
        expected: String,
        found: String,
    },
    #[error("sigma must be positive everywhere")]
    BadSigma,
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Smallest allowed per-dimension scale; degenerate (constant) input
/// dimensions are floored here instead of dividing by zero.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// One Gaussian-Bernoulli RBM: real-valued visible units with
/// per-unit scale σ, binary hidden units. Biases are stored 1×n so the
/// whole struct walks like any other tensor bag.
#[derive(Debug, Clone)]
pub struct GbRbmParams {
    /// hidden×visible coupling.
    pub w: Matrix,
    pub b_vis: Matrix,
    pub b_hid: Matrix,
    pub sigma: Matrix,
}

impl GbRbmParams {
    pub fn new(visible: usize, hidden: usize, sigma: Vec<f64>, rng: &mut SplitMix64) -> Self {
        assert_eq!(sigma.len(), visible, "sigma length");
        Self {
            w: Matrix::random_uniform(hidden, visible, -INIT_RANGE, INIT_RANGE, rng),
            b_vis: Matrix::zeros(1, visible),
            b_hid: Matrix::zeros(1, hidden),
            sigma: Matrix::from_vec(1, visible, sigma),
        }
    }

    pub fn visible_size(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w.rows()
    }

    pub fn validate(&self) -> Result<(), MdbmError> {
        if self.b_vis.cols() != self.visible_size()
            || self.b_hid.cols() != self.hidden_size()
            || self.sigma.cols() != self.visible_size()
        {
            return Err(MdbmError::ShapeMismatch {
                place: "rbm params",
                expected: format!("{}v/{}h", self.visible_size(), self.hidden_size()),
                found: format!(
                    "b_vis {}, b_hid {}, sigma {}",
                    self.b_vis.cols(),
                    self.b_hid.cols(),
                    self.sigma.cols()
                ),
            });
        }
        if self.sigma.as_slice().iter().any(|&s| s <= 0.0) {
            return Err(MdbmError::BadSigma);
        }
        Ok(())
    }
}

/// Evaluates the printed energy for one visible and one hidden layer.
pub fn rbm_energy(p: &GbRbmParams, v: &[f64], h: &[f64]) -> f64 {
    let sigma = p.sigma.as_slice();
    let b_vis = p.b_vis.as_slice();
    let b_hid = p.b_hid.as_slice();
    let mut e = 0.0;
    for i in 0..v.len() {
        let d = v[i] - b_vis[i];
        e += d * d / (2.0 * sigma[i] * sigma[i]);
    }
    for (j, &hj) in h.iter().enumerate() {
        let mut cross = 0.0;
        for i in 0..v.len() {
            cross += p.w.get(j, i) * v[i] / sigma[i];
        }
        e -= hj * cross;
        e -= b_hid[j] * hj;
    }
    e
}

/// p(h_j = 1 | v) = σ(b_j + Σ_i W_ji v_i/σ_i), for every hidden unit.
pub fn rbm_h_given_v(p: &GbRbmParams, v: &[f64]) -> Vec<f64> {
    let sigma = p.sigma.as_slice();
    let scaled: Vec<f64> = v.iter().zip(sigma).map(|(x, s)| x / s).collect();
    let mut a = p.w.matvec(&scaled);
    for (aj, bj) in a.iter_mut().zip(p.b_hid.as_slice()) {
        *aj += bj;
    }
    a.into_iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect()
}

/// Mean of the Gaussian visible conditional: b_i + σ_i Σ_j W_ji h_j.
pub fn rbm_v_given_h_mean(p: &GbRbmParams, h: &[f64]) -> Vec<f64> {
    let mut mean = p.w.matvec_t(h);
    for ((m, s), b) in mean
        .iter_mut()
        .zip(p.sigma.as_slice())
        .zip(p.b_vis.as_slice())
    {
        *m = *b + *s * *m;
    }
    mean
}

fn sample_binary(probs: &[f64], rng: &mut SplitMix64) -> Vec<f64> {
    probs
        .iter()
        .map(|&p| if rng.bernoulli(p) { 1.0 } else { 0.0 })
        .collect()
}

/// One contrastive-divergence parameter update over a batch (rows of
/// `data`). `clamp_biases` pins both bias vectors at zero, used when
/// training the top joint layer whose printed energy has no bias term.
pub fn cd_k_update(
    p: &mut GbRbmParams,
    data: &Matrix,
    k: usize,
    lr: f64,
    rng: &mut SplitMix64,
    clamp_biases: bool,
) {
    assert!(k >= 1, "contrastive divergence needs k >= 1");
    assert_eq!(data.cols(), p.visible_size(), "data width");
    if data.rows() == 0 || lr == 0.0 {
        return;
    }
    let n = data.rows();
    let visible = p.visible_size();
    let hidden = p.hidden_size();
    let sigma = p.sigma.as_slice().to_vec();

    let mut dw = Matrix::zeros(hidden, visible);
    let mut db_vis = vec![0.0; visible];
    let mut db_hid = vec![0.0; hidden];

    for r in 0..n {
        let v0 = data.row(r);
        let ph0 = rbm_h_given_v(p, v0);
        let v0_scaled: Vec<f64> = v0.iter().zip(&sigma).map(|(x, s)| x / s).collect();
        dw.add_outer(&ph0, &v0_scaled, 1.0);
        for i in 0..visible {
            db_vis[i] += (v0[i] - p.b_vis.as_slice()[i]) / (sigma[i] * sigma[i]);
        }
        for j in 0..hidden {
            db_hid[j] += ph0[j];
        }

        let mut hs = sample_binary(&ph0, rng);
        let mut vk: Vec<f64> = Vec::new();
        let mut phk: Vec<f64> = Vec::new();
        for step in 0..k {
            vk = rbm_v_given_h_mean(p, &hs);
            phk = rbm_h_given_v(p, &vk);
            if step + 1 < k {
                hs = sample_binary(&phk, rng);
            }
        }
        let vk_scaled: Vec<f64> = vk.iter().zip(&sigma).map(|(x, s)| x / s).collect();
        dw.add_outer(&phk, &vk_scaled, -1.0);
        for i in 0..visible {
            db_vis[i] -= (vk[i] - p.b_vis.as_slice()[i]) / (sigma[i] * sigma[i]);
        }
        for j in 0..hidden {
            db_hid[j] -= phk[j];
        }
    }

    let scale = lr / n as f64;
    p.w.add_scaled(&dw, scale);
    if clamp_biases {
        p.b_vis.zero_out();
        p.b_hid.zero_out();
    } else {
        for (b, d) in p.b_vis.as_mut_slice().iter_mut().zip(&db_vis) {
            *b += scale * d;
        }
        for (b, d) in p.b_hid.as_mut_slice().iter_mut().zip(&db_hid) {
            *b += scale * d;
        }
    }
}

/// Deterministic reconstruction quality: mean squared error between each
/// row and its one-step mean-field reconstruction.
pub fn reconstruction_error(p: &GbRbmParams, data: &Matrix) -> f64 {
    if data.rows() == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for r in 0..data.rows() {
        let v = data.row(r);
        let ph = rbm_h_given_v(p, v);
        let recon = rbm_v_given_h_mean(p, &ph);
        total += v
            .iter()
            .zip(&recon)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / v.len() as f64;
    }
    total / data.rows() as f64
}

/// Layer sizes and pretraining settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DbmConfig {
    pub h1: usize,
    pub h2: usize,
    pub h3: usize,
    pub cd_k: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
}

impl Default for DbmConfig {
    fn default() -> Self {
        Self {
            h1: 128,
            h2: 64,
            h3: 64,
            cd_k: 1,
            pretrain_epochs: 15,
            pretrain_lr: 0.01,
        }
    }
}

/// One modality's two-layer pathway after pretraining. The layer-2
/// visible bias from pretraining is discarded when stacking; σ belongs
/// to the visible (data) layer only.
#[derive(Debug, Clone)]
pub struct DbmPathway {
    pub sigma: Matrix,
    pub w1: Matrix,
    pub b1_vis: Matrix,
    pub b1_hid: Matrix,
    pub w2: Matrix,
    pub b2_hid: Matrix,
}

impl DbmPathway {
    pub fn visible_size(&self) -> usize {
        self.w1.cols()
    }

    /// Deterministic upward pass: (h¹ probabilities, h² probabilities).
    pub fn up(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let sigma = self.sigma.as_slice();
        let scaled: Vec<f64> = v.iter().zip(sigma).map(|(x, s)| x / s).collect();
        let mut a1 = self.w1.matvec(&scaled);
        for (a, b) in a1.iter_mut().zip(self.b1_hid.as_slice()) {
            *a += b;
        }
        let h1: Vec<f64> = a1.into_iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        let mut a2 = self.w2.matvec(&h1);
        for (a, b) in a2.iter_mut().zip(self.b2_hid.as_slice()) {
            *a += b;
        }
        let h2: Vec<f64> = a2.into_iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        (h1, h2)
    }
}

/// Three (or fewer) modality pathways joined by a shared top layer. The
/// top layer has coupling weights per pathway and no bias of its own,
/// matching the printed joint energy.
#[derive(Debug, Clone)]
pub struct DbmStack {
    pub pathways: Vec<(Modality, DbmPathway)>,
    /// Per-pathway coupling, each h³×h², aligned with `pathways`.
    pub joint: Vec<Matrix>,
    pub h3: usize,
}

impl DbmStack {
    /// Deterministic upward pass to the joint layer probabilities.
    pub fn up(&self, vectors: &[Vec<f64>]) -> Result<(Vec<(Vec<f64>, Vec<f64>)>, Vec<f64>), MdbmError> {
        if vectors.len() != self.pathways.len() {
            return Err(MdbmError::ShapeMismatch {
                place: "stack input",
                expected: format!("{} modality vectors", self.pathways.len()),
                found: format!("{}", vectors.len()),
            });
        }
        let mut per_path = Vec::with_capacity(self.pathways.len());
        let mut a3 = vec![0.0; self.h3];
        for ((_, path), v) in self.pathways.iter().zip(vectors) {
            if v.len() != path.visible_size() {
                return Err(MdbmError::ShapeMismatch {
                    place: "stack input",
                    expected: format!("{} features", path.visible_size()),
                    found: format!("{}", v.len()),
                });
            }
            let (h1, h2) = path.up(v);
            per_path.push((h1, h2));
            // accumulated below with the pathway's coupling
        }
        for (w3, (_, h2)) in self.joint.iter().zip(&per_path) {
            let contrib = w3.matvec(h2);
            for (a, c) in a3.iter_mut().zip(contrib) {
                *a += c;
            }
        }
        let h3 = a3.into_iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        Ok((per_path, h3))
    }
}

/// Total energy V + A + T − J of a full configuration: per-pathway
/// visible/h¹/h² terms plus the (negated) joint coupling term.
pub fn mdbm_joint_energy(
    stack: &DbmStack,
    vectors: &[Vec<f64>],
    h1s: &[Vec<f64>],
    h2s: &[Vec<f64>],
    h3: &[f64],
) -> f64 {
    assert_eq!(vectors.len(), stack.pathways.len());
    assert_eq!(h1s.len(), stack.pathways.len());
    assert_eq!(h2s.len(), stack.pathways.len());
    let mut energy = 0.0;
    for (idx, (_, path)) in stack.pathways.iter().enumerate() {
        let v = &vectors[idx];
        let h1 = &h1s[idx];
        let h2 = &h2s[idx];
        let sigma = path.sigma.as_slice();
        for i in 0..v.len() {
            let d = v[i] - path.b1_vis.as_slice()[i];
            energy += d * d / (2.0 * sigma[i] * sigma[i]);
        }
        for (j, &h) in h1.iter().enumerate() {
            let mut cross = 0.0;
            for i in 0..v.len() {
                cross += path.w1.get(j, i) * v[i] / sigma[i];
            }
            energy -= h * cross;
            energy -= path.b1_hid.as_slice()[j] * h;
        }
        for (j2, &h) in h2.iter().enumerate() {
            let mut cross = 0.0;
            for (j1, &hp) in h1.iter().enumerate() {
                cross += path.w2.get(j2, j1) * hp;
            }
            energy -= h * cross;
            energy -= path.b2_hid.as_slice()[j2] * h;
        }
        // Joint coupling enters the exponent as +J, i.e. −J in the energy.
        let w3 = &stack.joint[idx];
        for (j3, &h3v) in h3.iter().enumerate() {
            let mut cross = 0.0;
            for (j2, &h2v) in h2.iter().enumerate() {
                cross += w3.get(j3, j2) * h2v;
            }
            energy -= h3v * cross;
        }
    }
    energy
}

/// Greedy layer-wise pretraining: layer 1 on the data (σ from the data),
/// layer 2 on layer-1 probabilities (unit σ), then the joint layer on
/// the concatenated h² probabilities of all pathways with its biases
/// clamped at zero. Zero epochs returns the initialized stack.
pub fn pretrain_greedy(
    cfg: &DbmConfig,
    data: &[(Modality, Matrix)],
    seed: u64,
) -> Result<DbmStack, MdbmError> {
    assert!(!data.is_empty(), "at least one modality required");
    let mut rng = SplitMix64::new(seed);
    let mut pathways = Vec::with_capacity(data.len());
    let mut h2_blocks: Vec<Matrix> = Vec::with_capacity(data.len());

    for (modality, matrix) in data {
        let visible = matrix.cols();
        let sigma: Vec<f64> = (0..visible)
            .map(|c| {
                let col = matrix.column(c);
                crate::matrix::population_std(&col).max(SIGMA_FLOOR)
            })
            .collect();
        let mut rbm1 = GbRbmParams::new(visible, cfg.h1, sigma, &mut rng);
        rbm1.validate()?;
        for _ in 0..cfg.pretrain_epochs {
            cd_k_update(&mut rbm1, matrix, cfg.cd_k, cfg.pretrain_lr, &mut rng, false);
        }

        let mut h1_rows = Vec::with_capacity(matrix.rows());
        for r in 0..matrix.rows() {
            h1_rows.push(rbm_h_given_v(&rbm1, matrix.row(r)));
        }
        let h1_data = Matrix::from_rows(&h1_rows);
        let mut rbm2 = GbRbmParams::new(cfg.h1, cfg.h2, vec![1.0; cfg.h1], &mut rng);
        for _ in 0..cfg.pretrain_epochs {
            cd_k_update(&mut rbm2, &h1_data, cfg.cd_k, cfg.pretrain_lr, &mut rng, false);
        }

        let mut h2_rows = Vec::with_capacity(matrix.rows());
        for r in 0..matrix.rows() {
            h2_rows.push(rbm_h_given_v(&rbm2, h1_data.row(r)));
        }
        h2_blocks.push(Matrix::from_rows(&h2_rows));

        pathways.push((
            *modality,
            DbmPathway {
                sigma: rbm1.sigma.clone(),
                w1: rbm1.w,
                b1_vis: rbm1.b_vis,
                b1_hid: rbm1.b_hid,
                w2: rbm2.w,
                b2_hid: rbm2.b_hid,
                // rbm2.b_vis is discarded: h¹ keeps the bias it got as
                // a hidden layer.
            },
        ));
    }

    // Joint layer on the concatenation of every pathway's h² features.
    let rows = h2_blocks[0].rows();
    let joint_width = cfg.h2 * h2_blocks.len();
    let mut joint_rows = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut row = Vec::with_capacity(joint_width);
        for block in &h2_blocks {
            row.extend_from_slice(block.row(r));
        }
        joint_rows.push(row);
    }
    let joint_data = Matrix::from_rows(&joint_rows);
    let mut rbm3 = GbRbmParams::new(joint_width, cfg.h3, vec![1.0; joint_width], &mut rng);
    for _ in 0..cfg.pretrain_epochs {
        cd_k_update(&mut rbm3, &joint_data, cfg.cd_k, cfg.pretrain_lr, &mut rng, true);
    }
    let joint = (0..h2_blocks.len())
        .map(|idx| {
            let keep: Vec<usize> = (idx * cfg.h2..(idx + 1) * cfg.h2).collect();
            rbm3.w.select_columns(&keep)
        })
        .collect();

    Ok(DbmStack {
        pathways,
        joint,
        h3: cfg.h3,
    })
}

/// The fine-tuned model: the unrolled stack plus a two-way softmax head
/// on the joint layer.
#[derive(Debug, Clone)]
pub struct DbmClassifier {
    pub stack: DbmStack,
    pub head: Dense,
}

/// One labeled sample for fine-tuning: one flat feature vector per
/// pathway, aligned with the stack's modality order.
#[derive(Debug, Clone)]
pub struct DbmSample {
    pub vectors: Vec<Vec<f64>>,
    pub label: EffectivenessLabel,
}

struct DbmTrace {
    per_path: Vec<(Vec<f64>, Vec<f64>)>,
    h3: Vec<f64>,
    probs: Vec<f64>,
}

impl DbmClassifier {
    pub fn new(stack: DbmStack, rng: &mut SplitMix64) -> Self {
        let head = Dense::new(stack.h3, 2, rng);
        Self { stack, head }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            stack: DbmStack {
                pathways: self
                    .stack
                    .pathways
                    .iter()
                    .map(|(m, p)| {
                        (
                            *m,
                            DbmPathway {
                                sigma: p.sigma.clone(),
                                w1: z(&p.w1),
                                b1_vis: z(&p.b1_vis),
                                b1_hid: z(&p.b1_hid),
                                w2: z(&p.w2),
                                b2_hid: z(&p.b2_hid),
                            },
                        )
                    })
                    .collect(),
                joint: self.stack.joint.iter().map(z).collect(),
                h3: self.stack.h3,
            },
            head: self.head.zeros_like(),
        }
    }

    fn forward(&self, vectors: &[Vec<f64>]) -> Result<DbmTrace, MdbmError> {
        let (per_path, h3) = self.stack.up(vectors)?;
        let logits = self.head.forward(&h3);
        let probs = softmax(&logits);
        Ok(DbmTrace {
            per_path,
            h3,
            probs,
        })
    }

    /// Eval-mode class probabilities `[p_ineffective, p_effective]`.
    /// The unrolled forward pass is deterministic: probabilities flow,
    /// nothing is sampled.
    pub fn predict(&self, vectors: &[Vec<f64>]) -> Result<[f64; 2], MdbmError> {
        let t = self.forward(vectors)?;
        Ok([t.probs[0], t.probs[1]])
    }

    /// Forward + backward for one sample, accumulating into `grads`.
    pub fn accumulate_gradients(
        &self,
        sample: &DbmSample,
        grads: &mut DbmClassifier,
    ) -> Result<f64, MdbmError> {
        let trace = self.forward(&sample.vectors)?;
        let y = sample.label.class_index();
        let loss = bce_loss(trace.probs[y]);

        let dlogits = softmax_bce_grad(&trace.probs, y);
        let dh3 = self.head.backward(&trace.h3, &dlogits, &mut grads.head);
        let da3: Vec<f64> = dh3
            .iter()
            .zip(&trace.h3)
            .map(|(d, h)| d * h * (1.0 - h))
            .collect();
        for (idx, (_, path)) in self.stack.pathways.iter().enumerate() {
            let (h1, h2) = &trace.per_path[idx];
            let w3 = &self.stack.joint[idx];
            grads.stack.joint[idx].add_outer(&da3, h2, 1.0);
            let dh2 = w3.matvec_t(&da3);
            let da2: Vec<f64> = dh2
                .iter()
                .zip(h2)
                .map(|(d, h)| d * h * (1.0 - h))
                .collect();
            let gpath = &mut grads.stack.pathways[idx].1;
            gpath.w2.add_outer(&da2, h1, 1.0);
            for (g, d) in gpath.b2_hid.as_mut_slice().iter_mut().zip(&da2) {
                *g += d;
            }
            let dh1 = path.w2.matvec_t(&da2);
            let da1: Vec<f64> = dh1
                .iter()
                .zip(h1)
                .map(|(d, h)| d * h * (1.0 - h))
                .collect();
            let sigma = path.sigma.as_slice();
            let scaled: Vec<f64> = sample.vectors[idx]
                .iter()
                .zip(sigma)
                .map(|(x, s)| x / s)
                .collect();
            gpath.w1.add_outer(&da1, &scaled, 1.0);
            for (g, d) in gpath.b1_hid.as_mut_slice().iter_mut().zip(&da1) {
                *g += d;
            }
        }
        Ok(loss)
    }
}

impl TensorBag for DbmClassifier {
    fn for_each_tensor(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        for (m, path) in &mut self.stack.pathways {
            f(&format!("path.{m}.w1"), &mut path.w1);
            f(&format!("path.{m}.b1_hid"), &mut path.b1_hid);
            f(&format!("path.{m}.w2"), &mut path.w2);
            f(&format!("path.{m}.b2_hid"), &mut path.b2_hid);
        }
        for (idx, w3) in self.joint_names().into_iter().zip(&mut self.stack.joint) {
            f(&idx, w3);
        }
        f("head.w", &mut self.head.w);
        f("head.b", &mut self.head.b);
    }

    fn for_each_saved_tensor(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        // Persist the frozen tensors too: σ and the generative visible
        // bias survive checkpoints even though fine-tuning never
        // touches them.
        for (m, path) in &mut self.stack.pathways {
            f(&format!("path.{m}.sigma"), &mut path.sigma);
            f(&format!("path.{m}.b1_vis"), &mut path.b1_vis);
        }
        self.for_each_tensor(f);
    }
}

impl DbmClassifier {
    fn joint_names(&self) -> Vec<String> {
        self.stack
            .pathways
            .iter()
            .map(|(m, _)| format!("joint.{m}.w3"))
            .collect()
    }
}

fn validate_dbm_dataset(
    samples: &[DbmSample],
    stack: &DbmStack,
) -> Result<(), MdbmError> {
    if samples.len() < 2 {
        return Err(NeuralError::TooFewSamples(samples.len()).into());
    }
    let effective = samples.iter().filter(|s| s.label.is_effective()).count();
    if effective == 0 || effective == samples.len() {
        return Err(NeuralError::SingleClass.into());
    }
    for s in samples {
        if s.vectors.len() != stack.pathways.len() {
            return Err(MdbmError::ShapeMismatch {
                place: "dbm dataset",
                expected: format!("{} vectors per sample", stack.pathways.len()),
                found: format!("{}", s.vectors.len()),
            });
        }
    }
    Ok(())
}

/// Unrolls a pretrained stack into a classifier and fine-tunes every
/// weight with full-batch Adam on binary cross-entropy. Deterministic
/// given `tc.seed`; returns the model and the per-epoch loss curve.
pub fn finetune_as_classifier(
    stack: DbmStack,
    samples: &[DbmSample],
    tc: &TrainConfig,
) -> Result<(DbmClassifier, Vec<f64>), MdbmError> {
    tc.validate()?;
    validate_dbm_dataset(samples, &stack)?;
    let mut rng = SplitMix64::new(tc.seed);
    let mut model = DbmClassifier::new(stack, &mut rng);
    let mut opt = AdamOpt::new(tc);
    let mut curve = Vec::with_capacity(tc.epochs);
    for _ in 0..tc.epochs {
        let mut grads = model.zeros_like();
        let mut total = 0.0;
        for sample in samples {
            total += model.accumulate_gradients(sample, &mut grads)?;
        }
        let scale = 1.0 / samples.len() as f64;
        crate::neural::scale_tensors(&mut grads, scale);
        let gmap = crate::neural::tensor_map(&mut grads);
        opt.step(&mut model, &gmap);
        curve.push(total * scale);
    }
    if !curve.iter().all(|v| v.is_finite()) {
        return Err(NeuralError::NonFinite("dbm fine-tuning").into());
    }
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_rbm(visible: usize, hidden: usize, seed: u64) -> GbRbmParams {
        let mut rng = SplitMix64::new(seed);
        let sigma = (0..visible).map(|_| rng.uniform(0.5, 2.0)).collect();
        let mut p = GbRbmParams::new(visible, hidden, sigma, &mut rng);
        for b in p.b_vis.as_mut_slice() {
            *b = rng.uniform(-0.5, 0.5);
        }
        for b in p.b_hid.as_mut_slice() {
            *b = rng.uniform(-0.5, 0.5);
        }
        p
    }

    /// Independent straight-line transcription of the energy.
    fn oracle_energy(p: &GbRbmParams, v: &[f64], h: &[f64]) -> f64 {
        let mut quad = 0.0;
        for i in 0..v.len() {
            let s = p.sigma.as_slice()[i];
            quad += (v[i] - p.b_vis.as_slice()[i]).powi(2) / (2.0 * s * s);
        }
        let mut cross = 0.0;
        for j in 0..h.len() {
            for i in 0..v.len() {
                cross += h[j] * p.w.get(j, i) * v[i] / p.sigma.as_slice()[i];
            }
        }
        let mut bias = 0.0;
        for j in 0..h.len() {
            bias += p.b_hid.as_slice()[j] * h[j];
        }
        quad - cross - bias
    }

    #[test]
    fn zero_everything_has_zero_energy() {
        let mut rng = SplitMix64::new(0);
        let p = GbRbmParams::new(3, 2, vec![1.0; 3], &mut rng);
        let mut p = p;
        p.w.zero_out();
        assert_eq!(rbm_energy(&p, &[0.0; 3], &[0.0; 2]), 0.0);
    }

    #[test]
    fn visible_at_bias_kills_the_quadratic_term() {
        let mut rng = SplitMix64::new(1);
        let mut p = GbRbmParams::new(2, 2, vec![1.0; 2], &mut rng);
        p.w.zero_out();
        p.b_vis.as_mut_slice().copy_from_slice(&[0.7, -0.3]);
        assert_eq!(rbm_energy(&p, &[0.7, -0.3], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn energy_matches_straight_line_oracle() {
        let mut rng = SplitMix64::new(7);
        for seed in 0..100 {
            let p = tiny_rbm(3, 2, seed);
            let v: Vec<f64> = (0..3).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let h: Vec<f64> = (0..2).map(|_| f64::from(rng.bernoulli(0.5))).collect();
            let got = rbm_energy(&p, &v, &h);
            let want = oracle_energy(&p, &v, &h);
            assert!((got - want).abs() <= 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn zero_params_give_half_probabilities() {
        let mut rng = SplitMix64::new(2);
        let mut p = GbRbmParams::new(3, 4, vec![1.0; 3], &mut rng);
        p.w.zero_out();
        let probs = rbm_h_given_v(&p, &[0.4, -0.2, 1.0]);
        assert!(probs.iter().all(|&q| (q - 0.5).abs() < 1e-15));
    }

    #[test]
    fn large_hidden_bias_saturates() {
        let mut rng = SplitMix64::new(3);
        let mut p = GbRbmParams::new(1, 1, vec![1.0], &mut rng);
        p.w.zero_out();
        p.b_hid.as_mut_slice()[0] = 40.0;
        let probs = rbm_h_given_v(&p, &[0.0]);
        assert!(probs[0] > 1.0 - 1e-12);
    }

    #[test]
    fn hidden_conditional_matches_energy_enumeration() {
        // p(h_j=1 | v) from the sigmoid form must equal the Boltzmann
        // ratio exp(−E(h_j=1)) / (exp(−E(h_j=0)) + exp(−E(h_j=1))) with
        // the other unit held fixed, for both settings of the other unit.
        for seed in 0..20 {
            let p = tiny_rbm(2, 2, 100 + seed);
            let mut rng = SplitMix64::new(seed);
            let v: Vec<f64> = (0..2).map(|_| rng.uniform(-1.5, 1.5)).collect();
            let probs = rbm_h_given_v(&p, &v);
            for j in 0..2 {
                for other in [0.0, 1.0] {
                    let mut h1 = vec![other; 2];
                    h1[j] = 1.0;
                    let mut h0 = vec![other; 2];
                    h0[j] = 0.0;
                    let e1 = rbm_energy(&p, &v, &h1);
                    let e0 = rbm_energy(&p, &v, &h0);
                    let ratio = (-e1).exp() / ((-e0).exp() + (-e1).exp());
                    assert!(
                        (probs[j] - ratio).abs() < 1e-12,
                        "unit {j}, other {other}"
                    );
                }
            }
        }
    }

    #[test]
    fn visible_mean_formula() {
        let mut rng = SplitMix64::new(4);
        let mut p = GbRbmParams::new(2, 2, vec![1.5, 0.5], &mut rng);
        p.w.zero_out();
        assert_eq!(rbm_v_given_h_mean(&p, &[0.0, 0.0]), vec![0.0, 0.0]);
        p.b_vis.as_mut_slice().copy_from_slice(&[0.3, -0.7]);
        assert_eq!(rbm_v_given_h_mean(&p, &[0.0, 0.0]), vec![0.3, -0.7]);
        // Mean = b + σ ⊙ (Wᵀ h): transcription check.
        let p2 = tiny_rbm(3, 2, 11);
        let h = [1.0, 0.0];
        let mean = rbm_v_given_h_mean(&p2, &h);
        for i in 0..3 {
            let mut acc = 0.0;
            for j in 0..2 {
                acc += p2.w.get(j, i) * h[j];
            }
            let want = p2.b_vis.as_slice()[i] + p2.sigma.as_slice()[i] * acc;
            assert!((mean[i] - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn energy_is_invariant_under_hidden_permutation() {
        let p = tiny_rbm(3, 3, 21);
        let v = [0.4, -0.9, 1.2];
        let h = [1.0, 0.0, 1.0];
        let e = rbm_energy(&p, &v, &h);
        // Swap hidden units 0 and 2 together with their weight rows and
        // biases.
        let mut q = p.clone();
        for i in 0..3 {
            let a = q.w.get(0, i);
            let b = q.w.get(2, i);
            q.w.set(0, i, b);
            q.w.set(2, i, a);
        }
        q.b_hid.as_mut_slice().swap(0, 2);
        let h_swapped = [h[2], h[1], h[0]];
        let e2 = rbm_energy(&q, &v, &h_swapped);
        assert!((e - e2).abs() < 1e-12);
    }

    fn two_mode_data(n: usize, dim: usize, seed: u64) -> Matrix {
        let mut rng = SplitMix64::new(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let center = if k % 2 == 0 { 1.0 } else { -1.0 };
                (0..dim).map(|_| center + rng.uniform(-0.2, 0.2)).collect()
            })
            .collect();
        Matrix::from_rows(&rows)
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut p = tiny_rbm(3, 2, 5);
        let before = p.w.clone();
        let data = two_mode_data(10, 3, 1);
        let mut rng = SplitMix64::new(0);
        cd_k_update(&mut p, &data, 1, 0.0, &mut rng, false);
        assert_eq!(p.w.as_slice(), before.as_slice());
    }

    #[test]
    fn cd_is_deterministic_given_seed() {
        let data = two_mode_data(20, 3, 2);
        let run = || {
            let mut rng = SplitMix64::new(0);
            let mut p = GbRbmParams::new(3, 4, vec![1.0; 3], &mut SplitMix64::new(9));
            for _ in 0..5 {
                cd_k_update(&mut p, &data, 1, 0.05, &mut rng, false);
            }
            p
        };
        let a = run();
        let b = run();
        assert_eq!(a.w.as_slice(), b.w.as_slice());
        assert_eq!(a.b_vis.as_slice(), b.b_vis.as_slice());
    }

    #[test]
    fn reconstruction_improves_with_training() {
        let data = two_mode_data(100, 4, 3);
        let mut p = GbRbmParams::new(4, 6, vec![1.0; 4], &mut SplitMix64::new(1));
        let mut rng = SplitMix64::new(2);
        cd_k_update(&mut p, &data, 1, 0.05, &mut rng, false);
        let early = reconstruction_error(&p, &data);
        for _ in 0..199 {
            cd_k_update(&mut p, &data, 1, 0.05, &mut rng, false);
        }
        let late = reconstruction_error(&p, &data);
        assert!(late < early, "early {early}, late {late}");
    }

    fn toy_cfg() -> DbmConfig {
        DbmConfig {
            h1: 5,
            h2: 4,
            h3: 4,
            cd_k: 1,
            pretrain_epochs: 10,
            pretrain_lr: 0.05,
        }
    }

    fn toy_modality_data(seed: u64) -> Vec<(Modality, Matrix)> {
        vec![
            (Modality::Video, two_mode_data(12, 3, seed)),
            (Modality::Audio, two_mode_data(12, 3, seed + 1)),
            (Modality::Text, two_mode_data(12, 3, seed + 2)),
        ]
    }

    #[test]
    fn pretrained_stack_has_declared_shapes() {
        let stack = pretrain_greedy(&toy_cfg(), &toy_modality_data(7), 0).unwrap();
        assert_eq!(stack.pathways.len(), 3);
        for (_, p) in &stack.pathways {
            assert_eq!(p.w1.rows(), 5);
            assert_eq!(p.w1.cols(), 3);
            assert_eq!(p.w2.rows(), 4);
            assert_eq!(p.w2.cols(), 5);
        }
        for w3 in &stack.joint {
            assert_eq!(w3.rows(), 4);
            assert_eq!(w3.cols(), 4);
        }
    }

    #[test]
    fn zero_epoch_pretraining_keeps_biases_at_init() {
        let cfg = DbmConfig {
            pretrain_epochs: 0,
            ..toy_cfg()
        };
        let stack = pretrain_greedy(&cfg, &toy_modality_data(8), 0).unwrap();
        for (_, p) in &stack.pathways {
            assert!(p.b1_hid.as_slice().iter().all(|&b| b == 0.0));
            assert!(p.b2_hid.as_slice().iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn pretraining_reduces_first_layer_reconstruction_error() {
        let data = toy_modality_data(9);
        let cfg = toy_cfg();
        let untrained = pretrain_greedy(
            &DbmConfig {
                pretrain_epochs: 0,
                ..cfg.clone()
            },
            &data,
            0,
        )
        .unwrap();
        let trained = pretrain_greedy(
            &DbmConfig {
                pretrain_epochs: 100,
                ..cfg
            },
            &data,
            0,
        )
        .unwrap();
        let as_rbm = |p: &DbmPathway| GbRbmParams {
            w: p.w1.clone(),
            b_vis: p.b1_vis.clone(),
            b_hid: p.b1_hid.clone(),
            sigma: p.sigma.clone(),
        };
        let before = reconstruction_error(&as_rbm(&untrained.pathways[0].1), &data[0].1);
        let after = reconstruction_error(&as_rbm(&trained.pathways[0].1), &data[0].1);
        assert!(after < before, "before {before}, after {after}");
    }

    #[test]
    fn joint_energy_of_everything_zero_is_zero() {
        let cfg = DbmConfig {
            pretrain_epochs: 0,
            ..toy_cfg()
        };
        let mut stack = pretrain_greedy(&cfg, &toy_modality_data(10), 0).unwrap();
        for (_, p) in &mut stack.pathways {
            p.w1.zero_out();
            p.w2.zero_out();
            for s in p.sigma.as_mut_slice() {
                *s = 1.0;
            }
        }
        for w3 in &mut stack.joint {
            w3.zero_out();
        }
        let zeros3 = vec![vec![0.0; 3]; 3];
        let h1 = vec![vec![0.0; 5]; 3];
        let h2 = vec![vec![0.0; 4]; 3];
        let h3 = vec![0.0; 4];
        assert_eq!(mdbm_joint_energy(&stack, &zeros3, &h1, &h2, &h3), 0.0);
    }

    #[test]
    fn joint_coupling_sign_check() {
        // With only the joint weights nonzero and all h² and h³ units
        // on, the energy is −Σ of all coupling entries.
        let cfg = DbmConfig {
            pretrain_epochs: 0,
            ..toy_cfg()
        };
        let mut stack = pretrain_greedy(&cfg, &toy_modality_data(11), 0).unwrap();
        let mut expected = 0.0;
        for (_, p) in &mut stack.pathways {
            p.w1.zero_out();
            p.w2.zero_out();
            for s in p.sigma.as_mut_slice() {
                *s = 1.0;
            }
        }
        for w3 in &stack.joint {
            expected -= w3.as_slice().iter().sum::<f64>();
        }
        let vs = vec![vec![0.0; 3]; 3];
        let h1 = vec![vec![0.0; 5]; 3];
        let h2 = vec![vec![1.0; 4]; 3];
        let h3 = vec![1.0; 4];
        let e = mdbm_joint_energy(&stack, &vs, &h1, &h2, &h3);
        assert!((e - expected).abs() < 1e-12, "e {e}, expected {expected}");
    }

    #[test]
    fn joint_energy_matches_transcription_oracle() {
        let cfg = DbmConfig {
            pretrain_epochs: 2,
            ..toy_cfg()
        };
        let stack = pretrain_greedy(&cfg, &toy_modality_data(12), 3).unwrap();
        let mut rng = SplitMix64::new(5);
        for _ in 0..100 {
            let vs: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect())
                .collect();
            let h1: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..5).map(|_| f64::from(rng.bernoulli(0.5))).collect())
                .collect();
            let h2: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..4).map(|_| f64::from(rng.bernoulli(0.5))).collect())
                .collect();
            let h3: Vec<f64> = (0..4).map(|_| f64::from(rng.bernoulli(0.5))).collect();

            // Straight-line oracle: three pathway energies minus coupling.
            let mut want = 0.0;
            for (idx, (_, p)) in stack.pathways.iter().enumerate() {
                let rbm1 = GbRbmParams {
                    w: p.w1.clone(),
                    b_vis: p.b1_vis.clone(),
                    b_hid: p.b1_hid.clone(),
                    sigma: p.sigma.clone(),
                };
                want += oracle_energy(&rbm1, &vs[idx], &h1[idx]);
                for j2 in 0..4 {
                    for j1 in 0..5 {
                        want -= h2[idx][j2] * p.w2.get(j2, j1) * h1[idx][j1];
                    }
                    want -= p.b2_hid.as_slice()[j2] * h2[idx][j2];
                }
                for j3 in 0..4 {
                    for j2 in 0..4 {
                        want -= h3[j3] * stack.joint[idx].get(j3, j2) * h2[idx][j2];
                    }
                }
            }
            let got = mdbm_joint_energy(&stack, &vs, &h1, &h2, &h3);
            assert!((got - want).abs() <= 1e-12);
        }
    }

    fn separable_dbm_samples(n: usize, dim: usize, seed: u64) -> Vec<DbmSample> {
        let mut rng = SplitMix64::new(seed);
        (0..n)
            .map(|k| {
                let label = if k % 2 == 0 {
                    EffectivenessLabel::Effective
                } else {
                    EffectivenessLabel::Ineffective
                };
                let shift = if k % 2 == 0 { 0.8 } else { -0.8 };
                let vectors = (0..3)
                    .map(|_| (0..dim).map(|_| shift + rng.uniform(-0.3, 0.3)).collect())
                    .collect();
                DbmSample { vectors, label }
            })
            .collect()
    }

    fn pretrained_toy_stack(seed: u64) -> DbmStack {
        pretrain_greedy(
            &DbmConfig {
                pretrain_epochs: 5,
                ..toy_cfg()
            },
            &toy_modality_data(seed),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn finetuned_gradients_match_finite_differences() {
        let stack = pretrained_toy_stack(31);
        let mut rng = SplitMix64::new(32);
        let model = DbmClassifier::new(stack, &mut rng);
        let sample = &separable_dbm_samples(2, 3, 33)[0];
        let mut grads = model.zeros_like();
        model.accumulate_gradients(sample, &mut grads).unwrap();
        let gm = crate::neural::tensor_map(&mut grads.clone());
        let mut check = model;
        let worst = crate::neural::gradient_check_report(&mut check, &gm, |m| {
            let t = m.forward(&sample.vectors).unwrap();
            bce_loss(t.probs[sample.label.class_index()])
        })
        .unwrap();
        assert!(worst.error <= 1e-4, "worst {worst:?}");
    }

    #[test]
    fn finetuning_overfits_separable_data() {
        let stack = pretrained_toy_stack(41);
        let samples = separable_dbm_samples(10, 3, 42);
        let tc = TrainConfig {
            epochs: 200,
            learning_rate: 0.02,
            seed: 43,
            ..TrainConfig::default()
        };
        let (model, curve) = finetune_as_classifier(stack, &samples, &tc).unwrap();
        let correct = samples
            .iter()
            .filter(|s| {
                let p = model.predict(&s.vectors).unwrap();
                (p[1] > p[0]) == s.label.is_effective()
            })
            .count();
        assert_eq!(correct, samples.len());
        assert!(curve.last().unwrap() < &std::f64::consts::LN_2);
    }

    #[test]
    fn finetuning_is_deterministic() {
        let samples = separable_dbm_samples(6, 3, 50);
        let tc = TrainConfig {
            epochs: 8,
            seed: 51,
            ..TrainConfig::default()
        };
        let (_, a) = finetune_as_classifier(pretrained_toy_stack(52), &samples, &tc).unwrap();
        let (_, b) = finetune_as_classifier(pretrained_toy_stack(52), &samples, &tc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_finetuning_is_rejected() {
        let mut samples = separable_dbm_samples(6, 3, 60);
        for s in &mut samples {
            s.label = EffectivenessLabel::Effective;
        }
        let err =
            finetune_as_classifier(pretrained_toy_stack(61), &samples, &TrainConfig::default())
                .unwrap_err();
        assert!(matches!(err, MdbmError::Neural(NeuralError::SingleClass)));
    }

    #[test]
    fn forward_is_deterministic() {
        let stack = pretrained_toy_stack(71);
        let mut rng = SplitMix64::new(72);
        let model = DbmClassifier::new(stack, &mut rng);
        let v = vec![vec![0.2; 3], vec![-0.1; 3], vec![0.5; 3]];
        assert_eq!(model.predict(&v).unwrap(), model.predict(&v).unwrap());
    }
}
