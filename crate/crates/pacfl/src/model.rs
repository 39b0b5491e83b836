//! Small differentiable classifiers with manual analytic gradients.
//!
//! Two architectures: multinomial logistic regression and a one-hidden-layer
//! tanh MLP, both trained with softmax cross-entropy. Parameters live in a
//! single flat vector so federation-side averaging is plain arithmetic.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayView2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::partition::LabeledDataset;
use crate::seed;

/// Checkpoint format version (sibling of the signature record).
pub const MODEL_FORMAT_VERSION: u16 = 1;
const MODEL_MAGIC: &[u8; 4] = b"PACM";

/// Architecture descriptor; fixes the parameter layout exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    /// Linear softmax classifier: W (classes x features) then biases.
    LogReg { n_features: usize, n_classes: usize },
    /// One tanh hidden layer: W1, b1, W2, b2 in that order.
    Mlp {
        n_features: usize,
        hidden: usize,
        n_classes: usize,
    },
}

impl Arch {
    pub fn param_count(&self) -> usize {
        match *self {
            Arch::LogReg {
                n_features,
                n_classes,
            } => n_classes * n_features + n_classes,
            Arch::Mlp {
                n_features,
                hidden,
                n_classes,
            } => hidden * n_features + hidden + n_classes * hidden + n_classes,
        }
    }

    pub fn n_features(&self) -> usize {
        match *self {
            Arch::LogReg { n_features, .. } | Arch::Mlp { n_features, .. } => n_features,
        }
    }

    pub fn n_classes(&self) -> usize {
        match *self {
            Arch::LogReg { n_classes, .. } | Arch::Mlp { n_classes, .. } => n_classes,
        }
    }
}

/// Flat parameter vector tagged with its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Arch,
    theta: Vec<f64>,
}

impl ModelParams {
    pub fn new(arch: Arch, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != arch.param_count() {
            return Err(Error::Dimension(format!(
                "theta has {} entries, arch needs {}",
                theta.len(),
                arch.param_count()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("theta contains NaN or Inf".into()));
        }
        Ok(ModelParams { arch, theta })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub(crate) fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn l2_norm(&self) -> f64 {
        self.theta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Binary checkpoint: magic, version, arch descriptor, little-endian theta.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_FORMAT_VERSION.to_le_bytes())?;
        let (kind, features, hidden, classes) = match self.arch {
            Arch::LogReg {
                n_features,
                n_classes,
            } => (0u8, n_features, 0usize, n_classes),
            Arch::Mlp {
                n_features,
                hidden,
                n_classes,
            } => (1u8, n_features, hidden, n_classes),
        };
        w.write_all(&[kind])?;
        w.write_all(&(features as u32).to_le_bytes())?;
        w.write_all(&(hidden as u32).to_le_bytes())?;
        w.write_all(&(classes as u32).to_le_bytes())?;
        for v in &self.theta {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Parse("bad model magic".into()));
        }
        let mut buf2 = [0u8; 2];
        read_exact(r, &mut buf2)?;
        if u16::from_le_bytes(buf2) != MODEL_FORMAT_VERSION {
            return Err(Error::Parse("unsupported model version".into()));
        }
        let mut kind = [0u8; 1];
        read_exact(r, &mut kind)?;
        let mut buf4 = [0u8; 4];
        read_exact(r, &mut buf4)?;
        let n_features = u32::from_le_bytes(buf4) as usize;
        read_exact(r, &mut buf4)?;
        let hidden = u32::from_le_bytes(buf4) as usize;
        read_exact(r, &mut buf4)?;
        let n_classes = u32::from_le_bytes(buf4) as usize;
        let arch = match kind[0] {
            0 => Arch::LogReg {
                n_features,
                n_classes,
            },
            1 => Arch::Mlp {
                n_features,
                hidden,
                n_classes,
            },
            other => return Err(Error::Parse(format!("unknown arch kind {other}"))),
        };
        let mut theta = vec![0.0; arch.param_count()];
        let mut buf8 = [0u8; 8];
        for t in &mut theta {
            read_exact(r, &mut buf8)?;
            *t = f64::from_le_bytes(buf8);
        }
        ModelParams::new(arch, theta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.write_to(&mut file)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file =
            std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::read_from(&mut file)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Parse(format!("truncated model record: {e}")))
}

/// Seeded initialization: weights uniform in the Glorot range
/// +-sqrt(6 / (fan_in + fan_out)) per layer, biases zero.
pub fn init_model(arch: Arch, seed_value: u64) -> ModelParams {
    let mut rng = seed::rng(seed_value, "model-init");
    let mut theta = vec![0.0; arch.param_count()];
    match arch {
        Arch::LogReg {
            n_features,
            n_classes,
        } => {
            let limit = (6.0 / (n_features + n_classes) as f64).sqrt();
            for t in theta.iter_mut().take(n_classes * n_features) {
                *t = rng.gen_range(-limit..limit);
            }
        }
        Arch::Mlp {
            n_features,
            hidden,
            n_classes,
        } => {
            let l1 = (6.0 / (n_features + hidden) as f64).sqrt();
            let l2 = (6.0 / (hidden + n_classes) as f64).sqrt();
            let w1_end = hidden * n_features;
            for t in theta.iter_mut().take(w1_end) {
                *t = rng.gen_range(-l1..l1);
            }
            let w2_start = w1_end + hidden;
            for t in theta[w2_start..w2_start + n_classes * hidden].iter_mut() {
                *t = rng.gen_range(-l2..l2);
            }
        }
    }
    ModelParams { arch, theta }
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
}

/// Class logits for one sample. Returns (logits, hidden activations) where
/// the hidden part is empty for logistic regression.
fn forward(params: &ModelParams, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let theta = &params.theta;
    match params.arch {
        Arch::LogReg {
            n_features,
            n_classes,
        } => {
            let mut logits = vec![0.0; n_classes];
            for c in 0..n_classes {
                let mut z = theta[n_classes * n_features + c];
                let row = &theta[c * n_features..(c + 1) * n_features];
                for (w, xv) in row.iter().zip(x) {
                    z += w * xv;
                }
                logits[c] = z;
            }
            (logits, Vec::new())
        }
        Arch::Mlp {
            n_features,
            hidden,
            n_classes,
        } => {
            let b1_off = hidden * n_features;
            let w2_off = b1_off + hidden;
            let b2_off = w2_off + n_classes * hidden;
            let mut h = vec![0.0; hidden];
            for j in 0..hidden {
                let mut a = theta[b1_off + j];
                let row = &theta[j * n_features..(j + 1) * n_features];
                for (w, xv) in row.iter().zip(x) {
                    a += w * xv;
                }
                h[j] = a.tanh();
            }
            let mut logits = vec![0.0; n_classes];
            for c in 0..n_classes {
                let mut z = theta[b2_off + c];
                let row = &theta[w2_off + c * hidden..w2_off + (c + 1) * hidden];
                for (w, hv) in row.iter().zip(&h) {
                    z += w * hv;
                }
                logits[c] = z;
            }
            (logits, h)
        }
    }
}

/// Mean cross-entropy loss and its gradient over the rows of `features`
/// selected by `batch`.
pub fn loss_and_grad(
    params: &ModelParams,
    features: &ArrayView2<f64>,
    labels: &[usize],
    batch: &[usize],
) -> (f64, Vec<f64>) {
    assert!(!batch.is_empty(), "empty batch");
    let theta = &params.theta;
    let mut grad = vec![0.0; theta.len()];
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    let mut x = vec![0.0; params.arch.n_features()];
    for &row in batch {
        for (j, xv) in x.iter_mut().enumerate() {
            *xv = features[[row, j]];
        }
        let y = labels[row];
        let (mut probs, h) = forward(params, &x);
        softmax_in_place(&mut probs);
        loss -= probs[y].clamp(1e-300, 1.0).ln() * scale;
        match params.arch {
            Arch::LogReg {
                n_features,
                n_classes,
            } => {
                for c in 0..n_classes {
                    let dz = (probs[c] - f64::from(c == y)) * scale;
                    let row_off = c * n_features;
                    for (f, xv) in x.iter().enumerate() {
                        grad[row_off + f] += dz * xv;
                    }
                    grad[n_classes * n_features + c] += dz;
                }
            }
            Arch::Mlp {
                n_features,
                hidden,
                n_classes,
            } => {
                let b1_off = hidden * n_features;
                let w2_off = b1_off + hidden;
                let b2_off = w2_off + n_classes * hidden;
                let mut dh = vec![0.0; hidden];
                for c in 0..n_classes {
                    let dz = (probs[c] - f64::from(c == y)) * scale;
                    let row_off = w2_off + c * hidden;
                    for (j, hv) in h.iter().enumerate() {
                        grad[row_off + j] += dz * hv;
                        dh[j] += dz * theta[row_off + j];
                    }
                    grad[b2_off + c] += dz;
                }
                for (j, (&dhj, &hj)) in dh.iter().zip(&h).enumerate() {
                    let da = dhj * (1.0 - hj * hj);
                    let row_off = j * n_features;
                    for (f, xv) in x.iter().enumerate() {
                        grad[row_off + f] += da * xv;
                    }
                    grad[b1_off + j] += da;
                }
            }
        }
    }
    (loss, grad)
}

/// Mean loss over a whole dataset (no gradient).
pub fn full_loss(params: &ModelParams, ds: &LabeledDataset) -> f64 {
    if ds.n_samples() == 0 {
        return 0.0;
    }
    let batch: Vec<usize> = (0..ds.n_samples()).collect();
    let mut x = vec![0.0; params.arch.n_features()];
    let mut loss = 0.0;
    for &row in &batch {
        for (j, xv) in x.iter_mut().enumerate() {
            *xv = ds.features()[[row, j]];
        }
        let (mut probs, _) = forward(params, &x);
        softmax_in_place(&mut probs);
        loss -= probs[ds.labels()[row]].clamp(1e-300, 1.0).ln();
    }
    loss / ds.n_samples() as f64
}

/// Classification accuracy and mean loss on a dataset. An empty dataset
/// evaluates to (0, 0); callers should size test splits to avoid it.
pub fn evaluate(params: &ModelParams, ds: &LabeledDataset) -> (f64, f64) {
    let n = ds.n_samples();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mut x = vec![0.0; params.arch.n_features()];
    let mut correct = 0usize;
    let mut loss = 0.0;
    for row in 0..n {
        for (j, xv) in x.iter_mut().enumerate() {
            *xv = ds.features()[[row, j]];
        }
        let (mut probs, _) = forward(params, &x);
        softmax_in_place(&mut probs);
        loss -= probs[ds.labels()[row]].clamp(1e-300, 1.0).ln();
        let mut arg = 0;
        for c in 1..probs.len() {
            if probs[c] > probs[arg] {
                arg = c;
            }
        }
        if arg == ds.labels()[row] {
            correct += 1;
        }
    }
    (correct as f64 / n as f64, loss / n as f64)
}
