//! A small CNN engine: exact backpropagation through conv / pool / relu /
//! dense / softmax layers, plain mini-batch SGD, and evaluation.

mod layers;
mod metrics;
mod sequential;
mod tensor;

pub use layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2x2, maxpool_backward,
    relu_backward, relu_forward, softmax, softmax_backward, softmax_cross_entropy,
    softmax_cross_entropy_batch,
};
pub use metrics::ConfusionMatrix;
pub use sequential::{Layer, LayerSpec, Sequential, Trace};
pub use tensor::Tensor;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::augment::AugmentPolicy;
use crate::error::{Error, Result};
use crate::seed::{self, stage};

/// Anything that maps an input to class logits and can backpropagate a loss
/// into a flat list of parameter buffers.
pub trait Classifier {
    type Input;

    fn logits(&self, x: &Self::Input) -> Result<Vec<f64>>;

    fn params(&self) -> Vec<&[f64]>;

    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    /// Adds `scale * dLoss/dθ` of the cross-entropy loss for `(x, label)`
    /// into `grads`. Returns the unscaled loss and the logits.
    fn accumulate_gradients(
        &self,
        x: &Self::Input,
        label: usize,
        scale: f64,
        grads: &mut [Vec<f64>],
    ) -> Result<(f64, Vec<f64>)>;

    fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Argmax class (ties go to the lowest index) and softmax probabilities.
    fn predict(&self, x: &Self::Input) -> Result<(usize, Vec<f64>)> {
        let z = self.logits(x)?;
        Ok((argmax(&z), softmax(&z)))
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

impl Classifier for Sequential {
    type Input = Tensor;

    fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.into_data())
    }

    fn params(&self) -> Vec<&[f64]> {
        Sequential::params(self)
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        Sequential::params_mut(self)
    }

    fn accumulate_gradients(
        &self,
        x: &Tensor,
        label: usize,
        scale: f64,
        grads: &mut [Vec<f64>],
    ) -> Result<(f64, Vec<f64>)> {
        let (out, trace) = self.forward_trace(x)?;
        let logits = out.into_data();
        let (loss, mut g) = softmax_cross_entropy(&logits, label)?;
        g.iter_mut().for_each(|v| *v *= scale);
        let n = g.len();
        self.backward(trace, Tensor::from_parts(vec![n], g), grads, false)?;
        Ok((loss, logits))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Applied by the dataset pipeline when it assembles the training set.
    pub augment: AugmentPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            augment: AugmentPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(
                "learning rate must be finite and non-negative",
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// `epoch,train_loss,train_acc,val_loss,val_acc`; validation fields are
    /// empty when there is no validation set.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{:.6},{:.6},{},{}\n",
                r.epoch,
                r.train_loss,
                r.train_acc,
                opt(r.val_loss),
                opt(r.val_acc)
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Mean loss and accuracy over a labeled set, forward only.
pub fn loss_and_accuracy<M: Classifier>(
    model: &M,
    set: &[(M::Input, usize)],
) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0;
    for (x, y) in set {
        let z = model.logits(x)?;
        loss += softmax_cross_entropy(&z, *y)?.0;
        correct += usize::from(argmax(&z) == *y);
    }
    let n = set.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// One SGD step on a single mini-batch; returns the mean batch loss and the
/// number of correct predictions seen before the update.
pub fn sgd_step<M: Classifier>(
    model: &mut M,
    batch: &[(&M::Input, usize)],
    learning_rate: f64,
    grads: &mut [Vec<f64>],
) -> Result<(f64, usize)> {
    grads.iter_mut().for_each(|g| g.fill(0.0));
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    for (x, y) in batch {
        let (l, z) = model.accumulate_gradients(x, *y, scale, grads)?;
        loss += l;
        correct += usize::from(argmax(&z) == *y);
    }
    for (p, g) in model.params_mut().into_iter().zip(grads.iter()) {
        for (w, d) in p.iter_mut().zip(g) {
            *w -= learning_rate * d;
        }
    }
    Ok((loss * scale, correct))
}

/// Mini-batch SGD. Each epoch visits the training set in an order shuffled
/// from `(cfg.seed, epoch)`; gradients accumulate serially so a run is a
/// pure function of its inputs.
pub fn train<M: Classifier>(
    model: &mut M,
    train_set: &[(M::Input, usize)],
    val_set: &[(M::Input, usize)],
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut grads = model.zero_grads();
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(seed::derive(
            cfg.seed,
            stage::SHUFFLE,
            epoch as u64,
        )));
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&M::Input, usize)> = chunk
                .iter()
                .map(|&i| (&train_set[i].0, train_set[i].1))
                .collect();
            let (loss, c) = sgd_step(model, &batch, cfg.learning_rate, &mut grads)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += c;
        }
        let n = train_set.len() as f64;
        let (val_loss, val_acc) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l, a) = loss_and_accuracy(model, val_set)?;
            (Some(l), Some(a))
        };
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
        };
        log::info!(
            "epoch {epoch}/{}: train loss {:.4} acc {:.3}{}",
            cfg.epochs,
            rec.train_loss,
            rec.train_acc,
            match (val_loss, val_acc) {
                (Some(l), Some(a)) => format!(", val loss {l:.4} acc {a:.3}"),
                _ => String::new(),
            }
        );
        history.epochs.push(rec);
    }
    Ok(history)
}

/// Accuracy and confusion matrix of argmax predictions.
pub fn evaluate<M: Classifier>(
    model: &M,
    set: &[(M::Input, usize)],
) -> Result<(f64, ConfusionMatrix)> {
    if set.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let mut cm = ConfusionMatrix::new();
    for (x, y) in set {
        let (pred, _) = model.predict(x)?;
        cm.record(*y, pred);
    }
    Ok((cm.accuracy(), cm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_net(seed: u64) -> Sequential {
        Sequential::new(
            vec![1, 6, 6],
            &[
                LayerSpec::Conv2d {
                    k_h: 3,
                    k_w: 3,
                    in_ch: 1,
                    out_ch: 3,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: 27,
                    outputs: 6,
                },
            ],
            &mut seed::rng(seed),
        )
        .unwrap()
    }

    fn random_set(n: usize, seed: u64) -> Vec<(Tensor, usize)> {
        let mut rng = seed::rng(seed);
        (0..n)
            .map(|i| {
                let x = Tensor::new(
                    vec![1, 6, 6],
                    (0..36).map(|_| rng.random::<f64>()).collect(),
                )
                .unwrap();
                (x, i % 6)
            })
            .collect()
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[0.0; 6]), 0);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut net = tiny_net(1);
        let before = net.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        train(&mut net, &random_set(10, 2), &[], &cfg).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn memorizes_a_single_example() {
        let mut net = tiny_net(3);
        let set = random_set(1, 4);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let h = train(&mut net, &set, &[], &cfg).unwrap();
        let (loss, _) = loss_and_accuracy(&net, &set).unwrap();
        assert!(
            loss < 0.01,
            "final loss {loss}, history end {:?}",
            h.epochs.last()
        );
    }

    #[test]
    fn training_is_deterministic() {
        let set = random_set(12, 5);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 5,
            seed: 9,
            ..TrainConfig::default()
        };
        let (mut a, mut b) = (tiny_net(6), tiny_net(6));
        let ha = train(&mut a, &set, &set[..3], &cfg).unwrap();
        let hb = train(&mut b, &set, &set[..3], &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert_eq!(ha.epochs.len(), 3);
    }

    #[test]
    fn small_step_does_not_increase_batch_loss() {
        let mut net = tiny_net(7);
        let set = random_set(8, 8);
        let batch: Vec<(&Tensor, usize)> = set.iter().map(|(x, y)| (x, *y)).collect();
        let (before, _) = loss_and_accuracy(&net, &set).unwrap();
        let mut grads = net.zero_grads();
        sgd_step(&mut net, &batch, 1e-4, &mut grads).unwrap();
        let (after, _) = loss_and_accuracy(&net, &set).unwrap();
        assert!(after <= before, "{after} > {before}");
    }

    #[test]
    fn history_csv_layout() {
        let h = History {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 1.5,
                train_acc: 0.25,
                val_loss: None,
                val_acc: None,
            }],
        };
        assert_eq!(
            h.to_csv(),
            "epoch,train_loss,train_acc,val_loss,val_acc\n1,1.500000,0.250000,,\n"
        );
    }

    #[test]
    fn empty_sets_rejected() {
        let mut net = tiny_net(1);
        assert!(train(&mut net, &[], &[], &TrainConfig::default()).is_err());
        assert!(evaluate(&net, &[]).is_err());
    }

    #[test]
    fn evaluation_rows_match_class_counts() {
        let net = tiny_net(2);
        let set = random_set(18, 3);
        let (acc, cm) = evaluate(&net, &set).unwrap();
        assert_eq!(cm.row_sums(), [3; 6]);
        assert_eq!(acc, cm.accuracy());
    }
}
