//! Identity (cross-entropy), batch-hard triplet and center losses, and the
//! composite objective summed over feature streams.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, CanError, Result};
use crate::model::{ForwardOutput, StreamInfo};
use crate::tensor::Tensor;

pub use crate::autodiff::PROB_FLOOR;

/// Class ids of a mini-batch, one per sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchLabels {
    ids: Vec<usize>,
}

impl BatchLabels {
    pub fn new(ids: Vec<usize>) -> Self {
        BatchLabels { ids }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_positive(&self, a: usize, b: usize) -> bool {
        a != b && self.ids[a] == self.ids[b]
    }

    pub fn is_negative(&self, a: usize, b: usize) -> bool {
        self.ids[a] != self.ids[b]
    }
}

/// `-log(max(q[true], 1e-12))` for a probability vector `probs` and a
/// one-hot `target`.
pub fn cross_entropy(probs: &Tensor, target: &Tensor) -> Result<f64> {
    if probs.shape() != target.shape() || probs.ndim() != 1 {
        return Err(shape_err!(
            "cross_entropy on {:?} vs {:?}",
            probs.shape(),
            target.shape()
        ));
    }
    if probs.data().iter().any(|&q| !(0.0..=1.0).contains(&q)) || (probs.sum() - 1.0).abs() > 1e-6 {
        return Err(CanError::InvalidArgument("probabilities must be non-negative and sum to 1".into()));
    }
    let hot: Vec<usize> = target
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p != 0.0)
        .map(|(i, _)| i)
        .collect();
    match hot[..] {
        [t] if target.data()[t] == 1.0 => Ok(-probs.data()[t].max(PROB_FLOOR).ln()),
        _ => Err(CanError::InvalidArgument("target must be one-hot".into())),
    }
}

/// Hardest positive (farthest same id) and hardest negative (nearest other
/// id) per anchor from a B×B distance matrix. Ties go to the lowest index.
pub fn mine_batch_hard(dist: &Tensor, labels: &BatchLabels) -> Result<Vec<(usize, usize)>> {
    let b = labels.len();
    if dist.shape() != [b, b] {
        return Err(shape_err!("distance matrix {:?} for {} labels", dist.shape(), b));
    }
    (0..b)
        .map(|a| {
            let row = &dist.data()[a * b..(a + 1) * b];
            let mut pos: Option<usize> = None;
            let mut neg: Option<usize> = None;
            for j in 0..b {
                if labels.is_positive(a, j) && pos.is_none_or(|p| row[j] > row[p]) {
                    pos = Some(j);
                }
                if labels.is_negative(a, j) && neg.is_none_or(|n| row[j] < row[n]) {
                    neg = Some(j);
                }
            }
            match (pos, neg) {
                (Some(p), Some(n)) => Ok((p, n)),
                (None, _) => Err(CanError::InvalidArgument(format!("anchor {a} has no positive in the batch"))),
                (_, None) => Err(CanError::InvalidArgument(format!("anchor {a} has no negative in the batch"))),
            }
        })
        .collect()
}

/// Mean over anchors of `[margin + d(a,p) - d(a,n)]_+` with squared
/// Euclidean distances and batch-hard mining.
pub fn batch_hard_triplet(tape: &mut Tape, features: Var, labels: &BatchLabels, margin: f64) -> Result<Var> {
    let dist = tape.pairwise_sq_dist(features)?;
    let b = labels.len();
    let picks = mine_batch_hard(tape.value(dist), labels)?;
    let pos_idx: Vec<usize> = picks.iter().enumerate().map(|(a, &(p, _))| a * b + p).collect();
    let neg_idx: Vec<usize> = picks.iter().enumerate().map(|(a, &(_, n))| a * b + n).collect();
    let dp = tape.gather(dist, &pos_idx)?;
    let dn = tape.gather(dist, &neg_idx)?;
    let diff = tape.sub(dp, dn)?;
    let shifted = tape.add_scalar(diff, margin)?;
    let hinge = tape.relu(shifted)?;
    tape.mean_all(hinge)
}

/// Per-class feature centers for one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterBank {
    pub centers: Tensor,
}

impl CenterBank {
    pub fn new(num_classes: usize, dim: usize) -> Self {
        CenterBank {
            centers: Tensor::zeros(&[num_classes, dim]),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.centers.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.centers.shape()[1]
    }

    fn check(&self, features: &[usize], labels: &BatchLabels) -> Result<()> {
        if features.len() != 2 || features[0] != labels.len() || features[1] != self.dim() {
            return Err(shape_err!(
                "center bank of dim {} with features {:?} and {} labels",
                self.dim(),
                features,
                labels.len()
            ));
        }
        if let Some(&bad) = labels.ids().iter().find(|&&y| y >= self.num_classes()) {
            return Err(CanError::InvalidArgument(format!(
                "label {bad} outside center bank of {} classes",
                self.num_classes()
            )));
        }
        Ok(())
    }

    /// Centers gathered per sample, B×d.
    fn targets(&self, labels: &BatchLabels) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(labels.len() * d);
        for &y in labels.ids() {
            data.extend_from_slice(&self.centers.data()[y * d..(y + 1) * d]);
        }
        Tensor::new(vec![labels.len(), d], data).expect("center targets")
    }

    /// `½ Σ_i ||x_i − c_{y_i}||²` (or the unsquared norm when `squared` is
    /// false). Centers are constants on the tape.
    pub fn loss(&self, tape: &mut Tape, features: Var, labels: &BatchLabels, squared: bool) -> Result<Var> {
        self.check(tape.shape(features), labels)?;
        let c = tape.leaf(self.targets(labels));
        let diff = tape.sub(features, c)?;
        let total = if squared {
            let sq = tape.mul(diff, diff)?;
            tape.sum_all(sq)?
        } else {
            let norms = tape.row_norms(diff)?;
            tape.sum_all(norms)?
        };
        tape.scale(total, 0.5)
    }

    /// Moves every center touched by the batch toward its class mean:
    /// `c_j += lr * (mean_j - c_j)`.
    pub fn update(&mut self, features: &Tensor, labels: &BatchLabels, lr: f64) -> Result<()> {
        self.check(features.shape(), labels)?;
        let d = self.dim();
        let mut sums = vec![0.0; self.num_classes() * d];
        let mut counts = vec![0usize; self.num_classes()];
        for (i, &y) in labels.ids().iter().enumerate() {
            counts[y] += 1;
            for t in 0..d {
                sums[y * d + t] += features.data()[i * d + t];
            }
        }
        let centers = self.centers.data_mut();
        for (j, &n) in counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            for t in 0..d {
                let mean = sums[j * d + t] / n as f64;
                centers[j * d + t] += lr * (mean - centers[j * d + t]);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub use_ce: bool,
    pub use_triplet: bool,
    pub use_center: bool,
    /// Apply triplet and center losses to local streams as well as globals.
    pub supervise_local: bool,
    pub margin: f64,
    pub center_weight: f64,
    pub center_lr: f64,
    pub center_unsquared: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            use_ce: true,
            use_triplet: true,
            use_center: true,
            supervise_local: true,
            margin: 0.3,
            center_weight: 0.0005,
            center_lr: 0.5,
            center_unsquared: false,
        }
    }
}

impl LossConfig {
    pub fn ce_only() -> Self {
        LossConfig {
            use_triplet: false,
            use_center: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.use_ce || self.use_triplet || self.use_center) {
            return Err(CanError::Config("at least one loss term must be enabled".into()));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(CanError::Config(format!("triplet margin must be finite and >= 0, got {}", self.margin)));
        }
        if !(self.center_weight >= 0.0 && self.center_lr >= 0.0) {
            return Err(CanError::Config("center weight and rate must be >= 0".into()));
        }
        Ok(())
    }

    /// Whether triplet/center losses supervise this stream.
    pub fn supervises(&self, stream: &StreamInfo) -> bool {
        stream.is_global() || self.supervise_local
    }
}

/// Scalar values of the composite terms; `total == ce + triplet + λ·center`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub triplet: f64,
    pub center: f64,
}

/// `L = CE + Trip + λ·Center`. CE is averaged over every stream head;
/// triplet and center losses are averaged over the supervised streams.
pub fn composite_loss(
    tape: &mut Tape,
    out: &ForwardOutput,
    streams: &[StreamInfo],
    labels: &BatchLabels,
    banks: &[CenterBank],
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    cfg.validate()?;
    if out.features.len() != streams.len() || out.logits.len() != streams.len() || banks.len() != streams.len() {
        return Err(shape_err!(
            "{} streams, {} features, {} heads, {} center banks",
            streams.len(),
            out.features.len(),
            out.logits.len(),
            banks.len()
        ));
    }
    let zero = tape.leaf(Tensor::scalar(0.0));
    let ce = if cfg.use_ce {
        let mut terms = Vec::with_capacity(streams.len());
        for &logits in &out.logits {
            let probs = tape.softmax(logits)?;
            terms.push(tape.cross_entropy(probs, labels.ids())?);
        }
        mean_of(tape, &terms)?
    } else {
        zero
    };
    let supervised: Vec<usize> = (0..streams.len()).filter(|&i| cfg.supervises(&streams[i])).collect();
    let triplet = if cfg.use_triplet {
        let terms = supervised
            .iter()
            .map(|&i| batch_hard_triplet(tape, out.features[i], labels, cfg.margin))
            .collect::<Result<Vec<_>>>()?;
        mean_of(tape, &terms)?
    } else {
        zero
    };
    let center = if cfg.use_center {
        let terms = supervised
            .iter()
            .map(|&i| banks[i].loss(tape, out.features[i], labels, !cfg.center_unsquared))
            .collect::<Result<Vec<_>>>()?;
        mean_of(tape, &terms)?
    } else {
        zero
    };
    let weighted = tape.scale(center, cfg.center_weight)?;
    let partial = tape.add(ce, triplet)?;
    let total = tape.add(partial, weighted)?;
    let breakdown = LossBreakdown {
        total: tape.value(total).item()?,
        ce: tape.value(ce).item()?,
        triplet: tape.value(triplet).item()?,
        center: tape.value(center).item()?,
    };
    if !breakdown.total.is_finite() {
        return Err(CanError::NonFinite(format!("composite loss {breakdown:?}")));
    }
    Ok((total, breakdown))
}

fn mean_of(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    if terms.is_empty() {
        return Ok(tape.leaf(Tensor::scalar(0.0)));
    }
    let sum = tape.add_all(terms)?;
    tape.scale(sum, 1.0 / terms.len() as f64)
}
