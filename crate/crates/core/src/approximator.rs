//! Approximating permutation-equivariant functions on `[0,1]^{d x n}` with
//! quantizer -> attention -> bump readout.
//!
//! The quantizer snaps each entry to `{1/D, ..., 1}` and subtracts a penalty
//! summed over its column, so any column holding an entry outside `[0,1]`
//! comes out entirely non-positive. Attention, built on the duplicate-free
//! sub-grid, gives every grid context a distinct id, and the readout places
//! one triangular bump per context id.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{build_contextual_map, self_attention_softmax, AttentionWeights, CMMode};
use crate::error::{Error, Result};
use crate::ffn::{FFNet, InputWeights};
use crate::numeric::{dot, gaussian_vec, rng, sub_seed};
use crate::sequences::{LabeledDataset, SeparationParams, TokenSequence};

/// Largest grid `|G_D| = D^{dn}` that will be enumerated.
pub const MAX_GRID: u128 = 10_000_000;

/// Relative slack on the grid separation parameters, whose bounds are attained.
const GRID_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    pub grid: usize,
    pub step_delta: f64,
}

impl QuantizerSpec {
    pub fn new(grid: usize, step_delta: f64) -> Result<Self> {
        if grid < 2 || !(step_delta > 0.0 && step_delta < 1.0 / (2.0 * grid as f64)) {
            return Err(Error::InvalidParams(format!(
                "need D >= 2 and 0 < step_delta < 1/(2D), got D = {grid}, step_delta = {step_delta}"
            )));
        }
        Ok(Self { grid, step_delta })
    }

    /// `step_delta = 1/(10 D)`
    pub fn with_default_delta(grid: usize) -> Result<Self> {
        Self::new(grid, 1.0 / (10.0 * grid as f64))
    }
}

fn ramp(z: f64) -> f64 {
    z.max(0.0)
}

/// Reference value of one quantized entry, computed directly.
pub fn quantize_scalar(z: f64, spec: &QuantizerSpec) -> f64 {
    let (dd, delta) = (spec.grid as f64, spec.step_delta);
    let step = |u: f64| ramp(u) - ramp(u - 1.0);
    let stairs: f64 = (0..spec.grid).map(|t| step((z - t as f64 / dd) / delta) / dd).sum();
    stairs - step((z - 1.0) / delta)
}

/// Reference penalty: `-1` outside `[0,1]`, ramping to 0 over `step_delta` inside each end.
pub fn penalty_scalar(z: f64, spec: &QuantizerSpec) -> f64 {
    let delta = spec.step_delta;
    let lower = ramp(1.0 - z / delta) - ramp(-z / delta);
    let upper = ramp((z - 1.0) / delta + 1.0) - ramp((z - 1.0) / delta);
    -lower - upper
}

/// The quantizer as a ReLU layer without skip, acting on each `d`-column.
///
/// Per coordinate there are `2D + 2` stair units and 4 penalty units; every
/// penalty unit feeds all `d` outputs of its column.
pub fn build_quantizer(spec: &QuantizerSpec, d: usize, _n: usize) -> FFNet {
    let (dd, delta) = (spec.grid as f64, spec.step_delta);
    let per = 2 * spec.grid + 6;
    let q = d * per;
    let mut w1 = Array2::zeros((q, d));
    let mut b1 = Array1::zeros(q);
    let mut w2 = Array2::zeros((d, q));
    for t in 0..d {
        let base = t * per;
        let mut unit = 0;
        let mut add = |slope: f64, bias: f64, outs: &[(usize, f64)]| {
            let i = base + unit;
            w1[[i, t]] = slope;
            b1[i] = bias;
            for &(o, c) in outs {
                w2[[o, i]] = c;
            }
            unit += 1;
        };
        // stairs at 0, 1/D, ..., (D-1)/D, each of height 1/D
        for s in 0..spec.grid {
            let off = s as f64 / dd / delta;
            add(1.0 / delta, -off, &[(t, 1.0 / dd)]);
            add(1.0 / delta, -off - 1.0, &[(t, -1.0 / dd)]);
        }
        // a unit step down at 1
        add(1.0 / delta, -1.0 / delta, &[(t, -1.0)]);
        add(1.0 / delta, -1.0 / delta - 1.0, &[(t, 1.0)]);
        // penalties land on every coordinate of the column
        let all = |c: f64| (0..d).map(move |o| (o, c)).collect::<Vec<_>>();
        add(-1.0 / delta, 1.0, &all(-1.0));
        add(-1.0 / delta, 0.0, &all(1.0));
        add(1.0 / delta, -1.0 / delta + 1.0, &all(-1.0));
        add(1.0 / delta, -1.0 / delta, &all(1.0));
    }
    FFNet {
        w1: InputWeights::Dense(w1),
        b1,
        w2,
        b2: Array1::zeros(d),
        uses_skip: false,
    }
}

/// Grid cell of a coordinate: `ceil(z D)` clamped to `1..=D`, so cell `c` is `((c-1)/D, c/D]`.
pub fn cell_of(z: f64, grid: usize) -> usize {
    ((z * grid as f64).ceil() as isize).clamp(1, grid as isize) as usize
}

fn grid_size(grid: usize, d: usize, n: usize) -> Result<u128> {
    let size = (grid as u128).checked_pow((d * n) as u32).unwrap_or(u128::MAX);
    if size > MAX_GRID {
        return Err(Error::GridTooLarge(format!("|G_D| = {grid}^{} exceeds {MAX_GRID}", d * n)));
    }
    Ok(size)
}

/// Column `d`-vector for cell index `c` in `0..D^d`.
fn grid_column(mut c: usize, grid: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let digit = c % grid;
            c /= grid;
            (digit + 1) as f64 / grid as f64
        })
        .collect()
}

/// All grid points with pairwise-distinct columns, in lexicographic order of cell indices.
pub fn enumerate_subgrid(grid: usize, d: usize, n: usize) -> Result<Vec<Array2<f64>>> {
    grid_size(grid, d, n)?;
    let cells = grid.pow(d as u32);
    let mut out = Vec::new();
    let mut pick = vec![0usize; n];
    fn rec(k: usize, pick: &mut Vec<usize>, cells: usize, emit: &mut dyn FnMut(&[usize])) {
        if k == pick.len() {
            emit(pick);
            return;
        }
        for c in 0..cells {
            if pick[..k].contains(&c) {
                continue;
            }
            pick[k] = c;
            rec(k + 1, pick, cells, emit);
        }
    }
    rec(0, &mut pick, cells, &mut |p: &[usize]| {
        let cols: Vec<Vec<f64>> = p.iter().map(|&c| grid_column(c, grid, d)).collect();
        out.push(Array2::from_shape_fn((d, n), |(t, k)| cols[k][t]));
    });
    Ok(out)
}

/// `1 - prod_{i<n} (1 - i / D^d)`: the share of cells holding a repeated column.
pub fn duplicate_fraction(grid: usize, d: usize, n: usize) -> f64 {
    let cells = (grid as f64).powi(d as i32);
    1.0 - (0..n).map(|i| 1.0 - i as f64 / cells).product::<f64>()
}

/// Built-in permutation-equivariant targets with values in `[0,1]` on the cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Zero,
    /// Every column becomes the mean column.
    ColumnMean,
    /// Every entry becomes the maximum of its row.
    RowMax,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Zero, Target::ColumnMean, Target::RowMax];

    pub fn name(&self) -> &'static str {
        match self {
            Target::Zero => "zero",
            Target::ColumnMean => "column-mean",
            Target::RowMax => "row-max",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }

    pub fn eval(&self, z: &Array2<f64>) -> Array2<f64> {
        let (d, n) = z.dim();
        match self {
            Target::Zero => Array2::zeros((d, n)),
            Target::ColumnMean => {
                let m = z.sum_axis(ndarray::Axis(1)) / n as f64;
                Array2::from_shape_fn((d, n), |(t, _)| m[t])
            }
            Target::RowMax => {
                let m: Vec<f64> = z.rows().into_iter().map(|r| r.fold(f64::NEG_INFINITY, |a, &b| a.max(b))).collect();
                Array2::from_shape_fn((d, n), |(t, _)| m[t])
            }
        }
    }
}

/// Targets stored at grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: usize,
    pub keys: Vec<Array2<f64>>,
    pub values: Vec<Array2<f64>>,
    pub duplicate_free_only: bool,
}

impl GridFunction {
    /// Sample `f` at the cell centre `L - 1/(2D)` of every duplicate-free grid point.
    pub fn on_subgrid(grid: usize, d: usize, n: usize, f: &dyn Fn(&Array2<f64>) -> Array2<f64>) -> Result<Self> {
        let keys = enumerate_subgrid(grid, d, n)?;
        let half = 0.5 / grid as f64;
        let values = keys.iter().map(|l| f(&l.mapv(|x| x - half))).collect();
        Ok(Self {
            grid,
            keys,
            values,
            duplicate_free_only: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpInfo {
    pub keys: usize,
    pub direction: Vec<f64>,
    pub min_half_width: f64,
}

/// One triangle bump per key on the projection `w . h` with `w >= 0`.
///
/// Half-widths are `min(1/R, half the gap to the nearest other key)`, so bumps
/// never overlap and each key reads back exactly its value. If `floor` is
/// given, every input whose entries are all below `floor` must map to 0;
/// this is checked and reported as an error when it cannot hold.
pub fn build_bump_readout(
    keys: &[Vec<f64>],
    values: &[Vec<f64>],
    r: f64,
    floor: Option<f64>,
    seed: u64,
) -> Result<(FFNet, BumpInfo)> {
    if keys.len() != values.len() {
        return Err(Error::DimensionMismatch("keys and values differ in count".into()));
    }
    if !(r > 0.0) {
        return Err(Error::InvalidParams(format!("bump scale must be positive, got {r}")));
    }
    let Some(first) = keys.first() else {
        return Err(Error::Empty("bump readout needs at least one key; use FFNet::zero".into()));
    };
    let (d, d_out) = (first.len(), values[0].len());

    // positive-orthant directions keep low inputs below every bump
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut gen = rng(sub_seed(seed, 0xB0));
    for _ in 0..16 {
        let g: Vec<f64> = gaussian_vec(&mut gen, d).into_iter().map(f64::abs).collect();
        let nrm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let w: Vec<f64> = g.into_iter().map(|x| x / nrm).collect();
        let mut t: Vec<f64> = keys.iter().map(|k| dot(&w, k)).collect();
        t.sort_by(f64::total_cmp);
        let gap = t.windows(2).map(|p| p[1] - p[0]).fold(f64::INFINITY, f64::min);
        if best.as_ref().is_none_or(|(b, _)| gap > *b) {
            best = Some((gap, w));
        }
    }
    let (gap, w) = best.expect("at least one candidate");
    if !(gap > 0.0) {
        return Err(Error::KeysTooClose("readout keys share a projection".into()));
    }
    let t: Vec<f64> = keys.iter().map(|k| dot(&w, k)).collect();
    let mut sorted = t.clone();
    sorted.sort_by(f64::total_cmp);
    let half_width = |x: f64| {
        let i = sorted.partition_point(|&s| s < x);
        let left = if i > 0 { x - sorted[i - 1] } else { f64::INFINITY };
        let right = sorted.get(i + 1).map_or(f64::INFINITY, |&s| s - x);
        (1.0 / r).min(left.min(right) / 2.0)
    };

    let k = keys.len();
    let mut slopes = Array1::zeros(3 * k);
    let mut b1 = Array1::zeros(3 * k);
    let mut w2 = Array2::zeros((d_out, 3 * k));
    let mut min_hw = f64::INFINITY;
    let w_l1: f64 = w.iter().sum();
    for (j, (&tj, v)) in t.iter().zip(values).enumerate() {
        let hw = half_width(tj);
        min_hw = min_hw.min(hw);
        if let Some(fl) = floor {
            if !(tj - hw > w_l1 * fl) {
                return Err(Error::Precondition(format!(
                    "key {j} bump reaches below the zero region (projection {tj}, half-width {hw})"
                )));
            }
        }
        // ReLU(u + 1) - 2 ReLU(u) + ReLU(u - 1) with u = (w.h - t_j) / hw
        for (m, (off, coef)) in [(1.0, 1.0), (0.0, -2.0), (-1.0, 1.0)].into_iter().enumerate() {
            let i = 3 * j + m;
            slopes[i] = 1.0 / hw;
            b1[i] = -tj / hw + off;
            for o in 0..d_out {
                w2[[o, i]] = coef * v[o];
            }
        }
    }
    let net = FFNet::new(
        InputWeights::RankOne {
            slopes,
            direction: Array1::from(w.clone()),
        },
        b1,
        w2,
        Array1::zeros(d_out),
        false,
    )?;
    Ok((
        net,
        BumpInfo {
            keys: k,
            direction: w,
            min_half_width: min_hw,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxConfig {
    pub d: usize,
    pub n: usize,
    pub grid: usize,
    /// Bump scale; defaults to `8 D`.
    pub bump_scale: Option<f64>,
    /// Defaults to `1/(10 D)`.
    pub step_delta: Option<f64>,
    /// Largest attention logit over the grid vocabulary.
    pub logit_target: f64,
    pub seed: u64,
}

impl ApproxConfig {
    pub fn new(d: usize, n: usize, grid: usize, seed: u64) -> Self {
        Self {
            d,
            n,
            grid,
            bump_scale: None,
            step_delta: None,
            logit_target: 10.0,
            seed,
        }
    }

    pub fn bump_scale(&self) -> f64 {
        self.bump_scale.unwrap_or(8.0 * self.grid as f64)
    }
}

/// Quantizer, attention and readout composed in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Approximator {
    pub spec: QuantizerSpec,
    pub quantizer: FFNet,
    pub attn: AttentionWeights,
    pub readout: FFNet,
    pub bump_scale: f64,
    pub keys: usize,
    pub min_half_width: f64,
}

impl Approximator {
    pub fn forward(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        let q = self.quantizer.forward_matrix(z)?;
        let a = self_attention_softmax(&TokenSequence::new(q)?, &self.attn)?;
        self.readout.forward_matrix(a.as_array())
    }
}

fn columns_ascending(l: &Array2<f64>) -> bool {
    let cols: Vec<Vec<f64>> = l.columns().into_iter().map(|c| c.to_vec()).collect();
    cols.windows(2).all(|w| w[0].partial_cmp(&w[1]) == Some(std::cmp::Ordering::Less))
}

/// Grid tokens are separated with `(1/D, sqrt(d), 1/D)`, slackened so the attained bounds stay strict.
pub fn grid_params(grid: usize, d: usize) -> Result<SeparationParams> {
    let inv = 1.0 / grid as f64;
    SeparationParams::new(inv * (1.0 - GRID_SLACK), (d as f64).sqrt() * (1.0 + GRID_SLACK), inv * (1.0 - GRID_SLACK))
}

pub fn build_two_layer_approximator(
    target: &dyn Fn(&Array2<f64>) -> Array2<f64>,
    cfg: &ApproxConfig,
) -> Result<Approximator> {
    let (d, n, grid) = (cfg.d, cfg.n, cfg.grid);
    let spec = match cfg.step_delta {
        Some(s) => QuantizerSpec::new(grid, s)?,
        None => QuantizerSpec::with_default_delta(grid)?,
    };
    let quantizer = build_quantizer(&spec, d, n);
    let gf = GridFunction::on_subgrid(grid, d, n, target)?;
    if gf.keys.is_empty() {
        return Err(Error::Infeasible(format!("no duplicate-free grid points for D^d = {} < n = {n}", grid.pow(d as u32))));
    }
    // permutations of one grid point share their context ids, so one ordering per vocabulary suffices
    let reps: Vec<(&Array2<f64>, &Array2<f64>)> = gf.keys.iter().zip(&gf.values).filter(|(l, _)| columns_ascending(l)).collect();
    let ds = LabeledDataset::new(reps.iter().map(|(l, _)| TokenSequence::new((*l).clone())).collect::<Result<_>>()?)?;
    let p = grid_params(grid, d)?;
    let attn = build_contextual_map(&ds, &p, CMMode::MaxLogit { target: cfg.logit_target }, 1, sub_seed(cfg.seed, 1))?;

    // context ids as the pipeline produces them at each cell centre
    let half = 0.5 / grid as f64;
    let mut keys = Vec::new();
    let mut values = Vec::new();
    for &(l, v) in &reps {
        let q = quantizer.forward_matrix(&l.mapv(|x| x - half))?;
        let h = self_attention_softmax(&TokenSequence::new(q)?, &attn)?;
        for k in 0..n {
            keys.push(h.token(k).to_vec());
            values.push(v.column(k).to_vec());
        }
    }
    let r = cfg.bump_scale();
    let (readout, info) = build_bump_readout(&keys, &values, r, Some(0.25 / grid as f64), sub_seed(cfg.seed, 2))?;
    Ok(Approximator {
        spec,
        quantizer,
        attn,
        readout,
        bump_scale: r,
        keys: info.keys,
        min_half_width: info.min_half_width,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxReport {
    pub dist_p_estimate: f64,
    pub p: f64,
    pub mc_samples: usize,
    pub standard_error: f64,
    /// Mean of `|f - g|_p^p` over the samples.
    pub mean_pth_power: f64,
}

/// Monte Carlo `(E |f(X) - g(X)|_p^p)^{1/p}` for `X` uniform on `[0,1]^{d x n}`.
///
/// The standard error of the root comes from the delta method; for `p = 1`
/// it is the plain standard error of the mean.
pub fn estimate_dist_p(
    f: &dyn Fn(&Array2<f64>) -> Result<Array2<f64>>,
    g: &dyn Fn(&Array2<f64>) -> Result<Array2<f64>>,
    p: f64,
    d: usize,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<ApproxReport> {
    if !(p >= 1.0) || samples == 0 {
        return Err(Error::InvalidParams(format!("need p >= 1 and samples >= 1, got p = {p}, samples = {samples}")));
    }
    let mut r = rng(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let x = Array2::from_shape_fn((d, n), |_| r.random::<f64>());
        let diff = f(&x)? - g(&x)?;
        let v: f64 = diff.iter().map(|e| e.abs().powf(p)).sum();
        if !v.is_finite() {
            return Err(Error::NonFinite("integrand".into()));
        }
        sum += v;
        sum_sq += v * v;
    }
    let m = samples as f64;
    let mean = sum / m;
    let var = if samples > 1 { ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0) } else { 0.0 };
    let se_mean = (var / m).sqrt();
    let est = mean.powf(1.0 / p);
    let se = if p == 1.0 {
        se_mean
    } else if mean > 0.0 {
        se_mean * mean.powf(1.0 / p - 1.0) / p
    } else {
        0.0
    };
    Ok(ApproxReport {
        dist_p_estimate: est,
        p,
        mc_samples: samples,
        standard_error: se,
        mean_pth_power: mean,
    })
}

/// Share of uniform samples whose cells repeat a column, with its standard error.
pub fn sample_duplicate_fraction(grid: usize, d: usize, n: usize, samples: usize, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let mut hits = 0usize;
    for _ in 0..samples {
        let cols: Vec<Vec<usize>> = (0..n).map(|_| (0..d).map(|_| cell_of(r.random::<f64>(), grid)).collect()).collect();
        let dup = (0..n).any(|a| ((a + 1)..n).any(|b| cols[a] == cols[b]));
        hits += dup as usize;
    }
    let frac = hits as f64 / samples as f64;
    (frac, (frac * (1.0 - frac) / samples as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(grid: usize) -> QuantizerSpec {
        QuantizerSpec::with_default_delta(grid).unwrap()
    }

    #[test]
    fn scalar_quantizer_cases() {
        let s = spec(4);
        assert_eq!(quantize_scalar(-0.3, &s), 0.0);
        assert!((quantize_scalar(1.0 - 1.0 / 8.0, &s) - 1.0).abs() < 1e-12);
        assert!((quantize_scalar(0.1, &s) - 0.25).abs() < 1e-12);
        assert!(quantize_scalar(1.5, &s).abs() < 1e-12);
    }

    #[test]
    fn network_matches_scalar_reference() {
        let s = spec(5);
        let net = build_quantizer(&s, 2, 3);
        for &(a, b) in &[(0.13, 0.77), (-0.2, 0.5), (0.99, 1.3), (0.5, 0.02)] {
            let out = net.forward_column(Array1::from(vec![a, b]).view());
            let pen = penalty_scalar(a, &s) + penalty_scalar(b, &s);
            assert!((out[0] - (quantize_scalar(a, &s) + pen)).abs() < 1e-12);
            assert!((out[1] - (quantize_scalar(b, &s) + pen)).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_domain_column_is_non_positive() {
        let s = spec(4);
        let net = build_quantizer(&s, 2, 1);
        for &(a, b) in &[(1.5, 0.5), (0.5, -0.01), (1.0 + 1e-3, 0.9), (-3.0, 7.0)] {
            let out = net.forward_column(Array1::from(vec![a, b]).view());
            assert!(out.iter().all(|&x| x <= 1e-12), "{a},{b} -> {out}");
        }
    }

    #[test]
    fn subgrid_counts() {
        assert_eq!(enumerate_subgrid(2, 1, 2).unwrap().len(), 2);
        assert_eq!(enumerate_subgrid(3, 1, 2).unwrap().len(), 6);
        assert_eq!(enumerate_subgrid(3, 2, 2).unwrap().len(), 9 * 8);
        let pts = enumerate_subgrid(2, 1, 2).unwrap();
        assert_eq!(pts[0].row(0).to_vec(), vec![0.5, 1.0]);
        assert_eq!(pts[1].row(0).to_vec(), vec![1.0, 0.5]);
        assert!(matches!(enumerate_subgrid(10, 2, 4), Err(Error::GridTooLarge(_))));
    }

    #[test]
    fn single_bump_reads_back_its_value() {
        let (net, _) = build_bump_readout(&[vec![0.5, 0.5]], &[vec![0.7, -0.3]], 10.0, None, 1).unwrap();
        let out = net.forward_column(Array1::from(vec![0.5, 0.5]).view());
        assert!((out[0] - 0.7).abs() < 1e-12 && (out[1] + 0.3).abs() < 1e-12);
        let far = net.forward_column(Array1::from(vec![0.0, 0.0]).view());
        assert_eq!(far.to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn low_inputs_read_zero() {
        let grid = 4;
        let keys = vec![vec![0.9, 0.8], vec![0.3, 0.6]];
        let vals = vec![vec![1.0], vec![-1.0]];
        let (net, _) = build_bump_readout(&keys, &vals, 8.0 * grid as f64, Some(0.25 / grid as f64), 3).unwrap();
        for x in [[0.05, 0.05], [-1.0, 0.0], [0.0624, -5.0]] {
            assert_eq!(net.forward_column(Array1::from(x.to_vec()).view())[0], 0.0);
        }
    }

    #[test]
    fn zero_target_gives_zero_pipeline() {
        let cfg = ApproxConfig::new(1, 2, 4, 1);
        let ap = build_two_layer_approximator(&|z| Target::Zero.eval(z), &cfg).unwrap();
        let z = Array2::from_shape_vec((1, 2), vec![0.3, 0.8]).unwrap();
        assert!(ap.forward(&z).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pipeline_hits_targets_at_cell_centres() {
        let cfg = ApproxConfig::new(1, 2, 8, 2);
        let target = Target::ColumnMean;
        let ap = build_two_layer_approximator(&|z| target.eval(z), &cfg).unwrap();
        let tol = 2.0 / cfg.bump_scale();
        for l in enumerate_subgrid(8, 1, 2).unwrap() {
            let c = l.mapv(|x| x - 1.0 / 16.0);
            let out = ap.forward(&c).unwrap();
            let want = target.eval(&c);
            for (a, b) in out.iter().zip(want.iter()) {
                assert!((a - b).abs() < tol, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn dist_examples() {
        let f = |z: &Array2<f64>| Ok(z.clone());
        let rep = estimate_dist_p(&f, &f, 2.0, 2, 2, 100, 1).unwrap();
        assert_eq!(rep.dist_p_estimate, 0.0);
        let g = |z: &Array2<f64>| Ok(z.mapv(|x| x + 0.3));
        let rep = estimate_dist_p(&f, &g, 1.0, 1, 1, 50, 1).unwrap();
        assert!((rep.dist_p_estimate - 0.3).abs() < 1e-12);
    }

    #[test]
    fn duplicate_fraction_formula() {
        assert_eq!(duplicate_fraction(2, 1, 2), 0.5);
        assert!((duplicate_fraction(4, 1, 3) - (1.0 - 0.75 * 0.5)).abs() < 1e-15);
    }
}
