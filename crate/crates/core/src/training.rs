//! Trainable stacks of rank-1 attention blocks with hand-written backward passes.
//!
//! One block maps `Z` to `Y = Z + w_o s^T` with `s_k = sum_j z1_j P_jk`,
//! `P = colsoftmax(z1 z2^T)`, `z1 = Z^T v1`, `z2 = Z^T v2`, then applies a
//! ReLU feed-forward layer with skip. There is no layer normalization. A
//! `C x d` readout turns each final token into class logits.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boltzmann::log_sum_exp;
use crate::error::{Error, Result};
use crate::ffn::{FFNet, InputWeights};
use crate::numeric::{gaussian_vec, rel_err, rng, sub_seed};
use crate::sequences::{LabeledDataset, TokenSequence};

/// Token dimension for the default synthetic task.
pub const DEFAULT_DIM: usize = 32;
/// Feed-forward width per block.
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rank1Block {
    pub v1: Array1<f64>,
    pub v2: Array1<f64>,
    pub w_o: Array1<f64>,
    /// Dense first layer, skip connection on.
    pub ff: FFNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rank1Model {
    pub blocks: Vec<Rank1Block>,
    pub readout: Array2<f64>,
    /// With attention off every block is feed-forward only.
    pub attention: bool,
}

fn gauss_matrix<R: Rng>(r: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), gaussian_vec(r, rows * cols)).unwrap() * scale
}

fn gauss_vector<R: Rng>(r: &mut R, len: usize, scale: f64) -> Array1<f64> {
    Array1::from(gaussian_vec(r, len)) * scale
}

impl Rank1Model {
    /// Gaussian weights with scale `1/sqrt(fan-in)`, zero biases.
    pub fn new(d: usize, hidden: usize, classes: usize, depth: usize, seed: u64) -> Result<Self> {
        if d == 0 || classes == 0 {
            return Err(Error::InvalidParams("d and the number of classes must be positive".into()));
        }
        let mut r = rng(seed);
        let sd = 1.0 / (d as f64).sqrt();
        let sh = 1.0 / (hidden.max(1) as f64).sqrt();
        let blocks = (0..depth)
            .map(|_| {
                Ok(Rank1Block {
                    v1: gauss_vector(&mut r, d, sd),
                    v2: gauss_vector(&mut r, d, sd),
                    w_o: gauss_vector(&mut r, d, sd),
                    ff: FFNet::new(
                        InputWeights::Dense(gauss_matrix(&mut r, hidden, d, sd)),
                        Array1::zeros(hidden),
                        gauss_matrix(&mut r, d, hidden, sh),
                        Array1::zeros(d),
                        true,
                    )?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            blocks,
            readout: gauss_matrix(&mut r, classes, d, sd),
            attention: true,
        })
    }

    /// The same architecture with every attention sub-layer removed.
    pub fn ff_only(d: usize, hidden: usize, classes: usize, depth: usize, seed: u64) -> Result<Self> {
        let mut m = Self::new(d, hidden, classes, depth, seed)?;
        m.attention = false;
        for b in &mut m.blocks {
            b.w_o.fill(0.0);
        }
        Ok(m)
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.readout.ncols()
    }

    pub fn classes(&self) -> usize {
        self.readout.nrows()
    }

    pub fn param_count(&self) -> usize {
        let mut c = 0;
        self.visit(|_| c += 1);
        c
    }

    fn visit(&self, mut f: impl FnMut(f64)) {
        self.readout.iter().for_each(|&x| f(x));
        for b in &self.blocks {
            for a in [&b.v1, &b.v2, &b.w_o] {
                a.iter().for_each(|&x| f(x));
            }
            if let InputWeights::Dense(w1) = &b.ff.w1 {
                w1.iter().for_each(|&x| f(x));
            }
            b.ff.b1.iter().for_each(|&x| f(x));
            b.ff.w2.iter().for_each(|&x| f(x));
            b.ff.b2.iter().for_each(|&x| f(x));
        }
    }

    fn visit_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        self.readout.iter_mut().for_each(&mut f);
        for b in &mut self.blocks {
            for a in [&mut b.v1, &mut b.v2, &mut b.w_o] {
                a.iter_mut().for_each(&mut f);
            }
            if let InputWeights::Dense(w1) = &mut b.ff.w1 {
                w1.iter_mut().for_each(&mut f);
            }
            b.ff.b1.iter_mut().for_each(&mut f);
            b.ff.w2.iter_mut().for_each(&mut f);
            b.ff.b2.iter_mut().for_each(&mut f);
        }
    }

    /// All parameters in a fixed order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        self.visit(|x| v.push(x));
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!("{} values for {} parameters", flat.len(), self.param_count())));
        }
        let mut it = flat.iter();
        self.visit_mut(|x| *x = *it.next().unwrap());
        Ok(())
    }

    fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.visit_mut(|x| *x = 0.0);
        g
    }

    fn check(&self) -> Result<()> {
        let d = self.dim();
        for b in &self.blocks {
            let dense = matches!(&b.ff.w1, InputWeights::Dense(_));
            if !dense || !b.ff.uses_skip || b.v1.len() != d || b.v2.len() != d || b.w_o.len() != d || b.ff.output_dim() != d {
                return Err(Error::DimensionMismatch("block shapes disagree with the readout".into()));
            }
        }
        Ok(())
    }

    /// Per-token class logits, `C x n`.
    pub fn forward(&self, z: &TokenSequence, valid: Option<&[bool]>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(z, valid)?.0)
    }

    /// Logits together with the activations the backward pass needs.
    pub fn forward_cached(&self, z: &TokenSequence, valid: Option<&[bool]>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check()?;
        if z.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!("tokens have d = {}, model d = {}", z.dim(), self.dim())));
        }
        if valid.is_some_and(|v| v.len() != z.len()) {
            return Err(Error::DimensionMismatch("validity mask length".into()));
        }
        let mut h = z.as_array().clone();
        let mut blocks = Vec::with_capacity(self.depth());
        for b in &self.blocks {
            let c = block_forward(b, &h, valid, self.attention);
            h = c.out.clone();
            blocks.push(c);
        }
        let logits = self.readout.dot(&h);
        Ok((logits, ForwardCache { blocks, last: h }))
    }
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    input: Array2<f64>,
    z1: Array1<f64>,
    z2: Array1<f64>,
    p: Array2<f64>,
    s: Array1<f64>,
    y: Array2<f64>,
    pre: Array2<f64>,
    out: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    last: Array2<f64>,
}

fn dense_w1(ff: &FFNet) -> &Array2<f64> {
    match &ff.w1 {
        InputWeights::Dense(m) => m,
        _ => unreachable!("checked in Rank1Model::check"),
    }
}

fn block_forward(b: &Rank1Block, z: &Array2<f64>, valid: Option<&[bool]>, attention: bool) -> BlockCache {
    let n = z.ncols();
    let z1 = z.t().dot(&b.v1);
    let z2 = z.t().dot(&b.v2);
    let mut p = Array2::zeros((n, n));
    let mut s = Array1::zeros(n);
    let mut y = z.clone();
    if attention {
        let key_ok = |j: usize| valid.is_none_or(|v| v[j]);
        for k in 0..n {
            let col: Vec<f64> = (0..n).map(|j| if key_ok(j) { z1[j] * z2[k] } else { f64::NEG_INFINITY }).collect();
            let lse = log_sum_exp(&col);
            if lse == f64::NEG_INFINITY {
                continue;
            }
            for j in 0..n {
                p[[j, k]] = (col[j] - lse).exp();
            }
            s[k] = (0..n).map(|j| z1[j] * p[[j, k]]).sum();
        }
        for k in 0..n {
            y.column_mut(k).scaled_add(s[k], &b.w_o);
        }
    }
    let pre = dense_w1(&b.ff).dot(&y) + &b.ff.b1.view().insert_axis(Axis(1));
    let act = pre.mapv(|v| v.max(0.0));
    let out = &y + &b.ff.w2.dot(&act) + &b.ff.b2.view().insert_axis(Axis(1));
    BlockCache {
        input: z.clone(),
        z1,
        z2,
        p,
        s,
        y,
        pre,
        out,
    }
}

/// Accumulate `d loss / d params` into `g` given `d loss / d logits`; returns `d loss / d Z`.
fn backward(model: &Rank1Model, cache: &ForwardCache, dlogits: &Array2<f64>, g: &mut Rank1Model) -> Array2<f64> {
    g.readout += &dlogits.dot(&cache.last.t());
    let mut dh = model.readout.t().dot(dlogits);
    for (bi, c) in cache.blocks.iter().enumerate().rev() {
        let b = &model.blocks[bi];
        let gb = &mut g.blocks[bi];
        let w1 = dense_w1(&b.ff);

        // feed-forward with skip
        let act = c.pre.mapv(|v| v.max(0.0));
        gb.ff.w2 += &dh.dot(&act.t());
        gb.ff.b2 += &dh.sum_axis(Axis(1));
        let mut dpre = b.ff.w2.t().dot(&dh);
        dpre.zip_mut_with(&c.pre, |g, &p| {
            if p <= 0.0 {
                *g = 0.0
            }
        });
        if let InputWeights::Dense(gw1) = &mut gb.ff.w1 {
            *gw1 += &dpre.dot(&c.y.t());
        }
        gb.ff.b1 += &dpre.sum_axis(Axis(1));
        let dy = dh + w1.t().dot(&dpre);
        if !model.attention {
            dh = dy;
            continue;
        }

        // attention
        let n = c.input.ncols();
        let ds = dy.t().dot(&b.w_o);
        gb.w_o += &dy.dot(&c.s);
        let mut dz1 = Array1::<f64>::zeros(n);
        let mut dz2 = Array1::<f64>::zeros(n);
        for k in 0..n {
            for j in 0..n {
                let pjk = c.p[[j, k]];
                if pjk == 0.0 {
                    continue;
                }
                dz1[j] += ds[k] * pjk;
                // softmax Jacobian: dA_jk = P_jk ds_k (z1_j - s_k)
                let da = pjk * ds[k] * (c.z1[j] - c.s[k]);
                dz1[j] += da * c.z2[k];
                dz2[k] += da * c.z1[j];
            }
        }
        gb.v1 += &c.input.dot(&dz1);
        gb.v2 += &c.input.dot(&dz2);
        let mut dz = dy;
        for k in 0..n {
            dz.column_mut(k).scaled_add(dz1[k], &b.v1);
            dz.column_mut(k).scaled_add(dz2[k], &b.v2);
        }
        dh = dz;
    }
    dh
}

/// Loss, gradient and accuracy of a batch under mean cross-entropy over labeled tokens.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub loss: f64,
    pub grad: Rank1Model,
    pub correct: usize,
    pub tokens: usize,
}

fn valid_row(ds: &LabeledDataset, i: usize) -> Option<&[bool]> {
    ds.valid.as_ref().map(|v| v[i].as_slice())
}

/// Cross-entropy of one token with 1-based `label`; writes `softmax - onehot` into `dl`.
fn token_ce(logits: ndarray::ArrayView1<f64>, label: usize, mut dl: ndarray::ArrayViewMut1<f64>, scale: f64) -> (f64, bool) {
    let v = logits.to_vec();
    let lse = log_sum_exp(&v);
    let target = label - 1;
    let mut best = 0;
    for (c, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = c;
        }
        dl[c] = scale * ((x - lse).exp() - if c == target { 1.0 } else { 0.0 });
    }
    (lse - v[target], best == target)
}

pub fn batch_loss_grad(model: &Rank1Model, ds: &LabeledDataset, idx: &[usize]) -> Result<BatchResult> {
    let labels = ds.labels.as_ref().ok_or_else(|| Error::Precondition("dataset has no labels".into()))?;
    let count: usize = idx
        .iter()
        .map(|&i| (0..ds.seq_len()).filter(|&k| ds.is_valid(i, k) && labels[i][k] > 0).count())
        .sum();
    let mut grad = model.zeros_like();
    let (mut loss, mut correct) = (0.0, 0usize);
    if count == 0 {
        return Ok(BatchResult { loss, grad, correct, tokens: 0 });
    }
    let scale = 1.0 / count as f64;
    for &i in idx {
        let valid = valid_row(ds, i);
        let (logits, cache) = model.forward_cached(&ds.sequences[i], valid)?;
        if labels[i].iter().any(|&c| c > model.classes()) {
            return Err(Error::DimensionMismatch(format!("labels exceed {} classes", model.classes())));
        }
        let mut dl = Array2::zeros(logits.dim());
        for k in 0..ds.seq_len() {
            let c = labels[i][k];
            if !ds.is_valid(i, k) || c == 0 {
                continue;
            }
            let (l, ok) = token_ce(logits.column(k), c, dl.column_mut(k), scale);
            loss += l * scale;
            correct += ok as usize;
        }
        backward(model, &cache, &dl, &mut grad);
    }
    Ok(BatchResult { loss, grad, correct, tokens: count })
}

/// Mean loss and token accuracy over the whole dataset.
pub fn evaluate(model: &Rank1Model, ds: &LabeledDataset) -> Result<(f64, f64)> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let r = batch_loss_grad_no_grad(model, ds, &idx)?;
    Ok(r)
}

fn batch_loss_grad_no_grad(model: &Rank1Model, ds: &LabeledDataset, idx: &[usize]) -> Result<(f64, f64)> {
    let labels = ds.labels.as_ref().ok_or_else(|| Error::Precondition("dataset has no labels".into()))?;
    let (mut loss, mut correct, mut count) = (0.0, 0usize, 0usize);
    for &i in idx {
        let logits = model.forward(&ds.sequences[i], valid_row(ds, i))?;
        let mut scratch = Array1::zeros(model.classes());
        for k in 0..ds.seq_len() {
            let c = labels[i][k];
            if !ds.is_valid(i, k) || c == 0 {
                continue;
            }
            let (l, ok) = token_ce(logits.column(k), c, scratch.view_mut(), 1.0);
            loss += l;
            correct += ok as usize;
            count += 1;
        }
    }
    if count == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((loss / count as f64, correct as f64 / count as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    /// Heavy-ball momentum 0.9.
    Momentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Stop after the first epoch whose train accuracy reaches this value.
    pub stop_at_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_size: 32,
            learning_rate: 0.05,
            seed: 0,
            optimizer: Optimizer::Momentum,
            stop_at_accuracy: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParams("batch size must be positive and learning rate finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Row 0 is the untrained model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub epochs: Vec<EpochMetrics>,
}

impl TrainMetrics {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,accuracy\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:?},{:?}", e.epoch, e.loss, e.accuracy);
        }
        s
    }

    /// First epoch whose accuracy is at least `threshold`.
    pub fn epochs_to_reach(&self, threshold: f64) -> Option<usize> {
        self.epochs.iter().find(|e| e.accuracy >= threshold).map(|e| e.epoch)
    }

    pub fn final_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.accuracy)
    }
}

pub fn train(model: &mut Rank1Model, ds: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainMetrics> {
    cfg.validate()?;
    if ds.labels.is_none() {
        return Err(Error::Precondition("training needs labels".into()));
    }
    let mut metrics = TrainMetrics::default();
    let (loss, accuracy) = evaluate(model, ds)?;
    metrics.epochs.push(EpochMetrics { epoch: 0, loss, accuracy });
    if cfg.stop_at_accuracy.is_some_and(|t| accuracy >= t) {
        return Ok(metrics);
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut shuffle = rng(sub_seed(cfg.seed, 0x5417));
    let mut velocity = vec![0.0; model.param_count()];
    let mut theta = model.to_flat();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        for batch in order.chunks(cfg.batch_size) {
            let g = batch_loss_grad(model, ds, batch)?.grad.to_flat();
            for ((t, v), gi) in theta.iter_mut().zip(&mut velocity).zip(&g) {
                let step = match cfg.optimizer {
                    Optimizer::Sgd => *gi,
                    Optimizer::Momentum => {
                        *v = 0.9 * *v + gi;
                        *v
                    }
                };
                *t -= cfg.learning_rate * step;
            }
            model.set_flat(&theta)?;
        }
        let (loss, accuracy) = evaluate(model, ds)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        metrics.epochs.push(EpochMetrics { epoch, loss, accuracy });
        if cfg.stop_at_accuracy.is_some_and(|t| accuracy >= t) {
            break;
        }
    }
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub params: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
}

/// Central differences on every parameter against the analytic gradient.
pub fn grad_check(model: &Rank1Model, ds: &LabeledDataset, idx: &[usize], step: f64) -> Result<GradCheckReport> {
    let analytic = batch_loss_grad(model, ds, idx)?.grad.to_flat();
    let theta = model.to_flat();
    let mut probe = model.clone();
    let (mut worst, mut worst_index) = (0.0_f64, 0);
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + step;
        probe.set_flat(&t)?;
        let up = batch_loss_grad_no_grad_loss(&probe, ds, idx)?;
        t[i] = theta[i] - step;
        probe.set_flat(&t)?;
        let down = batch_loss_grad_no_grad_loss(&probe, ds, idx)?;
        let fd = (up - down) / (2.0 * step);
        let e = rel_err(analytic[i], fd);
        if e > worst {
            worst = e;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        params: theta.len(),
        max_rel_err: worst,
        worst_index,
    })
}

fn batch_loss_grad_no_grad_loss(model: &Rank1Model, ds: &LabeledDataset, idx: &[usize]) -> Result<f64> {
    Ok(batch_loss_grad_no_grad(model, ds, idx)?.0)
}

/// Gradient of the batch loss with respect to the input tokens of sequence `i`.
pub fn input_gradient(model: &Rank1Model, ds: &LabeledDataset, i: usize) -> Result<Array2<f64>> {
    let labels = ds.labels.as_ref().ok_or_else(|| Error::Precondition("dataset has no labels".into()))?;
    let (logits, cache) = model.forward_cached(&ds.sequences[i], valid_row(ds, i))?;
    let mut dl = Array2::zeros(logits.dim());
    for k in 0..ds.seq_len() {
        if ds.is_valid(i, k) && labels[i][k] > 0 {
            token_ce(logits.column(k), labels[i][k], dl.column_mut(k), 1.0);
        }
    }
    let mut g = model.zeros_like();
    Ok(backward(model, &cache, &dl, &mut g))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticRule {
    /// Label fixed by the token alone.
    TokenOnly,
    /// Token class shifted by one whenever a trigger token occurs in the sequence.
    ContextSensitive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub num_sequences: usize,
    pub seq_len: usize,
    pub vocab_size: usize,
    pub classes: usize,
    pub dim: usize,
    pub rule: SyntheticRule,
    pub seed: u64,
}

impl SyntheticTask {
    pub fn new(num_sequences: usize, seq_len: usize, vocab_size: usize, classes: usize, dim: usize, seed: u64) -> Self {
        Self {
            num_sequences,
            seq_len,
            vocab_size,
            classes,
            dim,
            rule: SyntheticRule::ContextSensitive,
            seed,
        }
    }

    /// `max(1, vocab / 8)` lowest token ids.
    pub fn triggers(&self) -> usize {
        (self.vocab_size / 8).max(1)
    }

    /// Label of token `id` inside a sequence holding `ids`.
    pub fn label(&self, id: usize, ids: &[usize]) -> usize {
        let class = id % self.classes;
        let shift = match self.rule {
            SyntheticRule::TokenOnly => 0,
            SyntheticRule::ContextSensitive => ids.iter().any(|&t| t < self.triggers()) as usize,
        };
        (class + shift) % self.classes + 1
    }

    pub fn generate(&self) -> Result<LabeledDataset> {
        let (nn, n, v, c, d) = (self.num_sequences, self.seq_len, self.vocab_size, self.classes, self.dim);
        if nn == 0 || n == 0 || d == 0 || c == 0 || v < c {
            return Err(Error::InvalidParams(format!(
                "need N, n, d, C >= 1 and vocab >= C, got N={nn} n={n} vocab={v} C={c} d={d}"
            )));
        }
        let mut r = rng(self.seed);
        let scale = 1.0 / (d as f64).sqrt();
        let vocab: Vec<Vec<f64>> = (0..v).map(|_| gaussian_vec(&mut r, d).into_iter().map(|x| x * scale).collect()).collect();
        let all: Vec<usize> = (0..v).collect();
        let mut seqs = Vec::with_capacity(nn);
        let mut labels = Vec::with_capacity(nn);
        for _ in 0..nn {
            let ids: Vec<usize> = if v >= n {
                all.choose_multiple(&mut r, n).copied().collect()
            } else {
                (0..n).map(|_| r.random_range(0..v)).collect()
            };
            let cols: Vec<Vec<f64>> = ids.iter().map(|&t| vocab[t].clone()).collect();
            seqs.push(TokenSequence::from_columns(&cols)?);
            labels.push(ids.iter().map(|&t| self.label(t, &ids)).collect());
        }
        Ok(LabeledDataset::new(seqs)?.with_labels(labels, c)?.with_seed(self.seed))
    }
}

pub fn gen_synthetic_task(n_seq: usize, n: usize, vocab_size: usize, classes: usize, d: usize, seed: u64) -> Result<LabeledDataset> {
    SyntheticTask::new(n_seq, n, vocab_size, classes, d, seed).generate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{self_attention_dense, DenseHead, Normalizer};

    fn tiny(seed: u64, rule: SyntheticRule) -> LabeledDataset {
        let mut t = SyntheticTask::new(4, 4, 8, 2, 4, seed);
        t.rule = rule;
        t.generate().unwrap()
    }

    #[test]
    fn depth_one_attention_matches_dense_kernel() {
        let m = Rank1Model::new(4, 6, 3, 1, 9).unwrap();
        let b = &m.blocks[0];
        let head = DenseHead {
            w_k: b.v1.clone().insert_axis(Axis(0)),
            w_q: b.v2.clone().insert_axis(Axis(0)),
            w_v: b.v1.clone().insert_axis(Axis(0)),
            w_o: b.w_o.clone().insert_axis(Axis(1)),
        };
        let mut r = rng(3);
        for _ in 0..100 {
            let z = TokenSequence::new(gauss_matrix(&mut r, 4, 5, 1.0)).unwrap();
            let want = self_attention_dense(&z, &[head.clone()], Normalizer::Softmax, None).unwrap();
            let got = block_forward(b, z.as_array(), None, true);
            for (a, w) in got.y.iter().zip(want.as_array().iter()) {
                assert!((a - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_blocks_are_linear() {
        let mut m = Rank1Model::new(3, 4, 2, 1, 1).unwrap();
        let b = &mut m.blocks[0];
        b.w_o.fill(0.0);
        b.ff.w2.fill(0.0);
        let z = TokenSequence::from_columns(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]).unwrap();
        let got = m.forward(&z, None).unwrap();
        assert_eq!(got, m.readout.dot(z.as_array()));
    }

    #[test]
    fn logits_are_permutation_equivariant() {
        let m = Rank1Model::new(3, 5, 2, 2, 4).unwrap();
        let cols = vec![vec![0.3, -1.0, 0.2], vec![1.0, 0.1, 0.0], vec![-0.4, 0.4, 0.9]];
        let a = m.forward(&TokenSequence::from_columns(&cols).unwrap(), None).unwrap();
        let perm = [2, 0, 1];
        let pc: Vec<Vec<f64>> = perm.iter().map(|&i| cols[i].clone()).collect();
        let b = m.forward(&TokenSequence::from_columns(&pc).unwrap(), None).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for c in 0..2 {
                assert!((b[[c, k]] - a[[c, i]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for depth in [1, 3] {
            let ds = tiny(depth as u64, SyntheticRule::ContextSensitive);
            let m = Rank1Model::new(4, 5, 2, depth, 11).unwrap();
            let rep = grad_check(&m, &ds, &[0, 1, 2], 1e-5).unwrap();
            assert!(rep.max_rel_err < 1e-5, "{rep:?}");
        }
    }

    #[test]
    fn padded_token_gets_no_gradient() {
        let ds = tiny(2, SyntheticRule::TokenOnly);
        let mut labels = ds.labels.clone().unwrap();
        labels[0][3] = 0;
        let mut valid = vec![vec![true; 4]; 4];
        valid[0][3] = false;
        let ds = ds.with_valid_mask(valid).unwrap().with_labels(labels, 2).unwrap();
        let m = Rank1Model::new(4, 5, 2, 3, 1).unwrap();
        let g = input_gradient(&m, &ds, 0).unwrap();
        assert!(g.column(3).iter().all(|&x| x == 0.0));
        assert!(g.column(0).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let ds = tiny(3, SyntheticRule::ContextSensitive);
        let mut m = Rank1Model::new(4, 5, 2, 1, 2).unwrap();
        let before = m.clone();
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let met = train(&mut m, &ds, &cfg).unwrap();
        assert_eq!(m, before);
        assert!(met.epochs.windows(2).all(|w| w[0].accuracy == w[1].accuracy));
    }

    #[test]
    fn tiny_dataset_is_memorized_deterministically() {
        let ds = tiny(4, SyntheticRule::ContextSensitive);
        let cfg = TrainConfig {
            epochs: 300,
            batch_size: 4,
            seed: 1,
            ..TrainConfig::default()
        };
        let mut a = Rank1Model::new(4, 8, 2, 1, 5).unwrap();
        let mut b = a.clone();
        let ma = train(&mut a, &ds, &cfg).unwrap();
        let mb = train(&mut b, &ds, &cfg).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(ma.final_accuracy(), 1.0);
    }

    #[test]
    fn labels_depend_on_vocabulary_and_token_only() {
        let t = SyntheticTask::new(64, 4, 16, 3, 4, 8);
        let ds = t.generate().unwrap();
        let labels = ds.labels.unwrap();
        assert!(labels.iter().flatten().all(|&c| (1..=3).contains(&c)));
        assert_eq!(t.label(5, &[5, 7, 9]), 5 % 3 + 1);
        assert_eq!(t.label(5, &[5, 0, 9]), (5 % 3 + 1) % 3 + 1);
    }
}
