//! The `ctxmap` command line. Every subcommand prints (or writes) a JSON
//! [`RunReport`]; the exit code is 0 when all checks pass, 1 when one fails,
//! 2 for usage and input errors and 3 for numerical infeasibility.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::approximator::{
    build_two_layer_approximator, duplicate_fraction, enumerate_subgrid, estimate_dist_p, sample_duplicate_fraction, ApproxConfig,
    Target,
};
use crate::attention::{build_contextual_map, hardmax_collision_demo, verify_contextual_map, AttentionWeights, CMMode};
use crate::boltzmann::{boltz, boltz_curvature, boltz_grad, check_boltz_separation, gen_separated_pair};
use crate::error::{Error, Result};
use crate::memorizer::build_one_layer_memorizer;
use crate::numeric::{rel_err, rng, sub_seed};
use crate::report::{Check, RunReport};
use crate::sequences::{
    assign_context_labels, check_separated, gen_separated_dataset_with, load_conll_columns, load_dataset, save_dataset, ConllOptions,
    GenConfig, LabeledDataset, SeparationParams,
};
use crate::training::{grad_check, train, Optimizer, Rank1Model, SyntheticTask, TrainConfig, DEFAULT_DIM, DEFAULT_HIDDEN};

/// Default directory for reports when `--out` is not given.
pub const OUT_DIR_ENV: &str = "CTXMAP_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "ctxmap", version, about = "Experiments on rank-1 softmax attention as a contextual mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a separated dataset.
    GenData(GenDataArgs),
    /// Check tokenwise separatedness of a dataset file.
    CheckSep(CheckSepArgs),
    /// Property checks for the Boltzmann operator.
    BoltzVerify(BoltzArgs),
    /// Build contextual-mapping attention weights for a dataset.
    BuildCm(BuildCmArgs),
    /// Verify given attention weights on a dataset.
    VerifyCm(VerifyCmArgs),
    /// Show that hardmax attention collides on collinear tokens.
    HardmaxDemo(HardmaxArgs),
    /// Memorize a labeled dataset with one attention layer and one ReLU layer.
    Memorize(MemorizeArgs),
    /// Approximate a permutation-equivariant target on a grid.
    Approximate(ApproxArgs),
    /// Train rank-1 Transformers on a synthetic or CoNLL task.
    Train(TrainArgs),
    /// Compare backward passes against finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path; defaults to `$CTXMAP_OUT_DIR/<command>.json`, else stdout.
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SepArgs {
    #[arg(long, default_value_t = 0.5)]
    r_min: f64,
    #[arg(long, default_value_t = 1.0)]
    r_max: f64,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
}

impl SepArgs {
    fn params(&self) -> Result<SeparationParams> {
        SeparationParams::new(self.r_min, self.r_max, self.eps)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
struct ShapeArgs {
    /// Number of sequences N.
    #[arg(long, default_value_t = 20)]
    num_seqs: usize,
    /// Tokens per sequence n.
    #[arg(long, default_value_t = 6)]
    seq_len: usize,
    /// Token dimension d.
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Draw tokens from a shared vocabulary of this size.
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Allow repeated tokens inside a sequence.
    #[arg(long)]
    allow_duplicates: bool,
}

impl ShapeArgs {
    fn generate(&self, p: SeparationParams, seed: u64) -> Result<LabeledDataset> {
        let mut cfg = GenConfig::new(self.num_seqs, self.seq_len, self.dim, p, seed);
        if let Some(v) = self.vocab_size {
            cfg = cfg.vocab_size(v);
        }
        if self.allow_duplicates {
            cfg = cfg.allow_duplicates();
        }
        gen_separated_dataset_with(&cfg)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    shape: ShapeArgs,
    #[command(flatten)]
    sep: SepArgs,
    /// Attach context-consistent labels with this many classes.
    #[arg(long, default_value_t = 0)]
    classes: usize,
    /// Where to write the dataset (`.json`, otherwise text).
    #[arg(long)]
    #[serde(skip)]
    data: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
struct CheckSepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    sep: SepArgs,
    #[arg(long)]
    #[serde(skip)]
    data: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
struct BoltzArgs {
    #[command(flatten)]
    common: Common,
    /// Random logit vectors for the derivative checks.
    #[arg(long, default_value_t = 10_000)]
    points: usize,
    /// Random separated pairs for the separation check.
    #[arg(long, default_value_t = 1_000)]
    pairs: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    #[value(name = "paper-exact", alias = "exact-constant")]
    #[serde(rename = "paper-exact")]
    ExactConstant,
    Scaled,
    MaxLogit,
}

#[derive(Debug, Clone, Args, Serialize)]
struct ModeArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::MaxLogit)]
    mode: ModeArg,
    /// Logit scale for `--mode scaled`.
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Largest logit magnitude for `--mode max-logit`.
    #[arg(long, default_value_t = 30.0)]
    max_logit: f64,
    /// Head size s.
    #[arg(long, default_value_t = 1)]
    head_size: usize,
}

impl ModeArgs {
    fn mode(&self) -> CMMode {
        match self.mode {
            ModeArg::ExactConstant => CMMode::ExactConstant,
            ModeArg::Scaled => CMMode::Scaled { beta: self.beta },
            ModeArg::MaxLogit => CMMode::MaxLogit { target: self.max_logit },
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
struct BuildCmArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    sep: SepArgs,
    #[command(flatten)]
    shape: ShapeArgs,
    #[command(flatten)]
    mode: ModeArgs,
    /// Dataset file; generated from the shape flags when absent.
    #[arg(long)]
    #[serde(skip)]
    data: Option<PathBuf>,
    /// Where to write the attention weights as JSON.
    #[arg(long)]
    #[serde(skip)]
    weights_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
struct VerifyCmArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    sep: SepArgs,
    #[arg(long)]
    #[serde(skip)]
    data: PathBuf,
    /// Attention weights JSON as written by `build-cm`.
    #[arg(long, conflicts_with = "identity", required_unless_present = "identity")]
    #[serde(skip)]
    weights: Option<PathBuf>,
    /// Use attention with a zero output matrix, which leaves tokens unchanged.
    #[arg(long)]
    identity: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
struct HardmaxArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 3)]
    dim: usize,
    /// Head counts to try.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4])]
    heads: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
struct MemorizeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    sep: SepArgs,
    #[arg(long, default_value_t = 50)]
    num_seqs: usize,
    #[arg(long, default_value_t = 8)]
    seq_len: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    /// Shared vocabulary size.
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Allow repeated tokens inside a sequence (needs `--pos-enc`).
    #[arg(long)]
    allow_duplicates: bool,
    /// Add the positional encoding before attention.
    #[arg(long)]
    pos_enc: bool,
    /// Largest attention logit.
    #[arg(long, default_value_t = 2.0)]
    max_logit: f64,
    /// Labeled dataset file; generated when absent.
    #[arg(long)]
    #[serde(skip)]
    data: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
struct ApproxArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    seq_len: usize,
    /// Grid resolution D.
    #[arg(long, default_value_t = 8)]
    grid: usize,
    /// Bump scale R; defaults to 8D.
    #[arg(long)]
    bump_scale: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, value_parser = parse_target, default_value = "column-mean")]
    target: Target,
}

fn parse_target(s: &str) -> std::result::Result<Target, String> {
    Target::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = Target::ALL.iter().map(|t| t.name()).collect();
        format!("unknown target {s:?}; expected one of {}", names.join(", "))
    })
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum OptArg {
    Sgd,
    Momentum,
}

#[derive(Debug, Clone, Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1)]
    depth: usize,
    #[arg(long, default_value_t = 400)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, value_enum, default_value_t = OptArg::Momentum)]
    optimizer: OptArg,
    #[arg(long, default_value_t = 256)]
    num_seqs: usize,
    #[arg(long, default_value_t = 8)]
    seq_len: usize,
    #[arg(long, default_value_t = 32)]
    vocab_size: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    /// Train on a CoNLL-format file instead of the synthetic task.
    #[arg(long)]
    #[serde(skip)]
    conll: Option<PathBuf>,
    /// Accuracy the final epoch must reach for the check to pass.
    #[arg(long, default_value_t = 0.98)]
    target_accuracy: f64,
    /// Stop as soon as the target accuracy is reached.
    #[arg(long)]
    early_stop: bool,
    /// Per-epoch CSV path; defaults to `$CTXMAP_OUT_DIR/train.csv`.
    #[arg(long)]
    #[serde(skip)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
struct GradCheckArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 20)]
    configs: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
}

/// Run the command line with `args` (including the program name); returns the exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let start = Instant::now();
    let (common, result) = dispatch(cli.command);
    match result.and_then(|mut report| {
        report.wall_time_ms = start.elapsed().as_millis() as u64;
        emit(&report, &common)?;
        Ok(report.all_passed())
    }) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                3
            } else {
                2
            }
        }
    }
}

fn dispatch(cmd: Command) -> (Common, Result<RunReport>) {
    match cmd {
        Command::GenData(a) => (a.common.clone(), gen_data(&a)),
        Command::CheckSep(a) => (a.common.clone(), check_sep(&a)),
        Command::BoltzVerify(a) => (a.common.clone(), boltz_verify(&a)),
        Command::BuildCm(a) => (a.common.clone(), build_cm(&a)),
        Command::VerifyCm(a) => (a.common.clone(), verify_cm(&a)),
        Command::HardmaxDemo(a) => (a.common.clone(), hardmax_demo(&a)),
        Command::Memorize(a) => (a.common.clone(), memorize(&a)),
        Command::Approximate(a) => (a.common.clone(), approximate(&a)),
        Command::Train(a) => (a.common.clone(), train_cmd(&a)),
        Command::GradCheck(a) => (a.common.clone(), grad_check_cmd(&a)),
    }
}

fn out_dir() -> Option<PathBuf> {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn emit(report: &RunReport, common: &Common) -> Result<()> {
    let text = report.to_json() + "\n";
    let path = common.out.clone().or_else(|| out_dir().map(|d| d.join(format!("{}.json", report.command))));
    match path {
        Some(p) => write_file(&p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn config<T: Serialize>(args: &T) -> Value {
    serde_json::to_value(args).expect("arguments serialize")
}

fn separation_checks(report: &mut RunReport, ds: &LabeledDataset, p: &SeparationParams) -> Result<()> {
    let sep = check_separated(ds, p)?;
    report.push(Check::above("min_token_norm", sep.min_norm, p.r_min, "lower norm bound r_min"));
    report.push(Check::below("max_token_norm", sep.max_norm, p.r_max, "upper norm bound r_max"));
    report.push(Check::above("min_distinct_token_distance", sep.min_pair_dist, p.eps, "token separation eps"));
    report.details = json!({
        "violation_count": sep.violation_count,
        "margins": sep.margins,
        "sequences": ds.len(),
        "seq_len": ds.seq_len(),
        "dim": ds.dim(),
    });
    Ok(())
}

fn gen_data(a: &GenDataArgs) -> Result<RunReport> {
    let p = a.sep.params()?;
    let mut ds = a.shape.generate(p, a.common.seed)?;
    if a.classes > 0 {
        ds = assign_context_labels(ds, a.classes, sub_seed(a.common.seed, 7))?;
    }
    save_dataset(&ds, &a.data)?;
    let mut r = RunReport::new("gen-data", a.common.seed, config(a));
    separation_checks(&mut r, &ds, &p)?;
    Ok(r)
}

fn check_sep(a: &CheckSepArgs) -> Result<RunReport> {
    let p = a.sep.params()?;
    let ds = load_dataset(&a.data)?;
    let mut r = RunReport::new("check-sep", a.common.seed, config(a));
    separation_checks(&mut r, &ds, &p)?;
    Ok(r)
}

/// Derivative, sign and separation checks on random logit vectors.
pub fn boltz_checks(seed: u64, points: usize, pairs: usize) -> Result<Vec<Check>> {
    let mut g = rng(sub_seed(seed, 0xB01));
    let (mut grad_err, mut ident_err) = (0.0_f64, 0.0_f64);
    let (mut grad_viol, mut curv_viol, mut grad_cases, mut curv_cases) = (0usize, 0usize, 0usize, 0usize);
    for _ in 0..points {
        let n = g.random_range(2..=8);
        let spread = g.random_range(1.0..20.0);
        let a: Vec<f64> = (0..n).map(|_| g.random_range(-spread..spread)).collect();
        let rep = boltz(&a)?;
        ident_err = ident_err.max((rep.log_partition - rep.entropy - rep.value).abs());
        let grad = boltz_grad(&a)?;
        let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ln_n = (n as f64).ln();
        for i in 0..n {
            let h = 1e-6;
            let (mut up, mut down) = (a.clone(), a.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (boltz(&up)?.value - boltz(&down)?.value) / (2.0 * h);
            grad_err = grad_err.max(rel_err(grad[i], fd));
            if a[i] < max - ln_n - 1.0 {
                grad_cases += 1;
                grad_viol += (grad[i] >= 0.0) as usize;
            }
            if a[i] < max - ln_n - 3.0 {
                curv_cases += 1;
                curv_viol += (boltz_curvature(&a, i)? >= 0.0) as usize;
            }
        }
    }

    let (mut sep_fail, mut sep_checked, mut worst_margin) = (0usize, 0usize, f64::INFINITY);
    for _ in 0..pairs {
        let n = g.random_range(2..=8);
        let delta = 2.0 * (n as f64).ln() + 3.0 + 0.1;
        let r_lo = (n - 1) as f64 * delta / 2.0 * (1.0 + 1e-6) + 1e-6;
        let r = g.random_range(r_lo.min(40.0)..=40.0);
        let Some((a, b)) = gen_separated_pair(&mut g, n, r, delta) else {
            continue;
        };
        let rep = check_boltz_separation(&a, &b, r, delta)?;
        if rep.skipped {
            continue;
        }
        sep_checked += 1;
        worst_margin = worst_margin.min(rep.measured_gap_log - rep.lower_bound_log);
        sep_fail += (!rep.passes) as usize;
    }

    Ok(vec![
        Check::below("identity_log_partition_minus_entropy", ident_err, 1e-9, "Boltz = log-partition - entropy, tolerance 1e-9"),
        Check::below("gradient_vs_finite_difference", grad_err, 1e-6, "closed-form gradient vs central differences, step 1e-6"),
        Check::new(
            "gradient_negative_below_max_minus_log_n_minus_1",
            grad_viol == 0,
            grad_viol as f64,
            0.0,
            &format!("monotone-decrease region, {grad_cases} coordinates tested"),
        ),
        Check::new(
            "curvature_negative_below_max_minus_log_n_minus_3",
            curv_viol == 0,
            curv_viol as f64,
            0.0,
            &format!("concavity region, {curv_cases} coordinates tested"),
        ),
        Check::new(
            "separation_exceeds_log_n_squared_exp_minus_2r",
            sep_fail == 0 && sep_checked > 0,
            worst_margin,
            0.0,
            &format!("log gap minus log of (log n)^2 e^(-2r) over {sep_checked} distinct pairs"),
        ),
    ])
}

fn boltz_verify(a: &BoltzArgs) -> Result<RunReport> {
    let mut r = RunReport::new("boltz-verify", a.common.seed, config(a));
    for c in boltz_checks(a.common.seed, a.points, a.pairs)? {
        r.push(c);
    }
    Ok(r)
}

fn load_or_generate(data: &Option<PathBuf>, shape: &ShapeArgs, p: SeparationParams, seed: u64) -> Result<LabeledDataset> {
    match data {
        Some(path) => load_dataset(path),
        None => shape.generate(p, seed),
    }
}

fn cm_checks(r: &mut RunReport, w: &AttentionWeights, ds: &LabeledDataset, p: &SeparationParams) -> Result<()> {
    let rep = verify_contextual_map(w, ds, p)?;
    r.push(Check::below("max_output_norm", rep.max_out_norm, rep.r_bound, "output norm bound r_max + eps/4"));
    r.push(Check::above(
        "min_distinct_context_gap_log",
        rep.min_distinct_gap_log,
        rep.delta_theory_log,
        "log of the guaranteed contextual gap for this vocabulary size, n, d and separation",
    ));
    r.push(Check::below(
        "max_displacement_ratio",
        rep.max_displacement_ratio,
        1.0,
        "token displacement over (eps / 4 r_max) times the largest input norm",
    ));
    r.details = serde_json::to_value(&rep)?;
    Ok(())
}

fn build_cm(a: &BuildCmArgs) -> Result<RunReport> {
    let p = a.sep.params()?;
    let ds = load_or_generate(&a.data, &a.shape, p, a.common.seed)?;
    let w = build_contextual_map(&ds, &p, a.mode.mode(), a.mode.head_size, sub_seed(a.common.seed, 1))?;
    if let Some(path) = &a.weights_out {
        write_file(path, &(serde_json::to_string_pretty(&w)? + "\n"))?;
    }
    let mut r = RunReport::new("build-cm", a.common.seed, config(a));
    cm_checks(&mut r, &w, &ds, &p)?;
    Ok(r)
}

fn verify_cm(a: &VerifyCmArgs) -> Result<RunReport> {
    let p = a.sep.params()?;
    let ds = load_dataset(&a.data)?;
    let w: AttentionWeights = match &a.weights {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => AttentionWeights::zero_output(ds.dim(), 1),
    };
    if w.dim() != ds.dim() {
        return Err(Error::DimensionMismatch(format!("weights have d = {}, data d = {}", w.dim(), ds.dim())));
    }
    let mut r = RunReport::new("verify-cm", a.common.seed, config(a));
    cm_checks(&mut r, &w, &ds, &p)?;
    Ok(r)
}

fn hardmax_demo(a: &HardmaxArgs) -> Result<RunReport> {
    let mut r = RunReport::new("hardmax-demo", a.common.seed, config(a));
    let mut details = Vec::new();
    for &h in &a.heads {
        let rep = hardmax_collision_demo(a.dim, h, sub_seed(a.common.seed, h as u64), a.trials)?;
        r.push(Check::at_least(
            &format!("hardmax_collision_rate_h{h}"),
            rep.collision_rate,
            1.0,
            "collinear tokens always collide under hardmax",
        ));
        r.push(Check::at_least(
            &format!("softmax_separation_rate_h{h}"),
            rep.softmax_separations as f64 / rep.trials as f64,
            1.0,
            "rank-1 softmax separates the same pair",
        ));
        details.push(serde_json::to_value(&rep)?);
    }
    r.details = Value::Array(details);
    Ok(r)
}

fn memorize(a: &MemorizeArgs) -> Result<RunReport> {
    let p = a.sep.params()?;
    let ds = match &a.data {
        Some(path) => load_dataset(path)?,
        None => {
            let shape = ShapeArgs {
                num_seqs: a.num_seqs,
                seq_len: a.seq_len,
                dim: a.dim,
                vocab_size: a.vocab_size,
                allow_duplicates: a.allow_duplicates,
            };
            assign_context_labels(shape.generate(p, a.common.seed)?, a.classes, sub_seed(a.common.seed, 7))?
        }
    };
    let (_, rep) = build_one_layer_memorizer(&ds, &p, CMMode::MaxLogit { target: a.max_logit }, a.pos_enc, a.common.seed)?;
    let mut r = RunReport::new("memorize", a.common.seed, config(a));
    r.push(Check::at_least("exact_match_rate", rep.exact_match_rate, 1.0, "every labeled token decoded exactly"));
    r.push(Check::at_most(
        "param_count",
        rep.param_count as f64,
        rep.param_bound as f64,
        "parameter budget 4(s + d) + d(2nN + d)",
    ));
    r.details = serde_json::to_value(&rep)?;
    Ok(r)
}

fn approximate(a: &ApproxArgs) -> Result<RunReport> {
    let mut cfg = ApproxConfig::new(a.dim, a.seq_len, a.grid, a.common.seed);
    cfg.bump_scale = a.bump_scale;
    let target = a.target;
    let ap = build_two_layer_approximator(&|z| target.eval(z), &cfg)?;
    let half = 0.5 / a.grid as f64;
    let mut key_err = 0.0_f64;
    for l in enumerate_subgrid(a.grid, a.dim, a.seq_len)? {
        let c = l.mapv(|x| x - half);
        let diff = ap.forward(&c)? - target.eval(&c);
        key_err = diff.iter().fold(key_err, |m, x| m.max(x.abs()));
    }
    let pipeline = |z: &ndarray::Array2<f64>| ap.forward(z);
    let exact = |z: &ndarray::Array2<f64>| Ok(target.eval(z));
    let dist = estimate_dist_p(&pipeline, &exact, a.p, a.dim, a.seq_len, a.samples, sub_seed(a.common.seed, 3))?;
    let (frac, se) = sample_duplicate_fraction(a.grid, a.dim, a.seq_len, a.samples, sub_seed(a.common.seed, 4));
    let expected = duplicate_fraction(a.grid, a.dim, a.seq_len);

    let mut r = RunReport::new("approximate", a.common.seed, config(a));
    let bound = 2.0 / cfg.bump_scale();
    r.push(Check::below("max_error_at_grid_keys", key_err, bound, "bump readout tolerance 2/R at cell centres"));
    r.push(Check::at_most(
        "duplicate_cell_fraction_deviation",
        (frac - expected).abs(),
        3.0 * se,
        "three standard errors around 1 - prod(1 - i/D^d)",
    ));
    r.details = json!({
        "approx": dist,
        "keys": ap.keys,
        "bump_scale": ap.bump_scale,
        "min_half_width": ap.min_half_width,
        "duplicate_fraction_expected": expected,
        "duplicate_fraction_measured": frac,
    });
    Ok(r)
}

fn train_cmd(a: &TrainArgs) -> Result<RunReport> {
    let (ds, classes, dim) = match &a.conll {
        Some(path) => {
            let corpus = load_conll_columns(path, &ConllOptions::new(a.dim, a.common.seed))?;
            let c = corpus.tags.len();
            (corpus.dataset, c, a.dim)
        }
        None => {
            let task = SyntheticTask::new(a.num_seqs, a.seq_len, a.vocab_size, a.classes, a.dim, a.common.seed);
            (task.generate()?, a.classes, a.dim)
        }
    };
    let mut model = Rank1Model::new(dim, a.hidden, classes, a.depth, sub_seed(a.common.seed, 1))?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.common.seed,
        optimizer: match a.optimizer {
            OptArg::Sgd => Optimizer::Sgd,
            OptArg::Momentum => Optimizer::Momentum,
        },
        stop_at_accuracy: a.early_stop.then_some(a.target_accuracy),
    };
    let metrics = train(&mut model, &ds, &cfg)?;
    if let Some(path) = a.csv.clone().or_else(|| out_dir().map(|d| d.join("train.csv"))) {
        write_file(&path, &metrics.to_csv())?;
    }
    let mut r = RunReport::new("train", a.common.seed, config(a));
    r.push(Check::at_least(
        "final_train_accuracy",
        metrics.final_accuracy(),
        a.target_accuracy,
        "requested accuracy threshold",
    ));
    r.details = json!({
        "epochs_run": metrics.epochs.len() - 1,
        "epochs_to_target": metrics.epochs_to_reach(a.target_accuracy),
        "param_count": model.param_count(),
        "final_loss": metrics.epochs.last().map(|e| e.loss),
    });
    Ok(r)
}

/// Random small model and dataset for gradient checks; depth alternates 1 and 3.
pub fn grad_check_config(seed: u64, index: usize) -> Result<(Rank1Model, LabeledDataset)> {
    let mut g = rng(sub_seed(seed, index as u64));
    let depth = if index % 2 == 0 { 1 } else { 3 };
    let d = g.random_range(2..=5);
    let n = g.random_range(2..=5);
    let classes = g.random_range(2..=3);
    let task = SyntheticTask::new(3, n, 2 * n.max(classes), classes, d, g.random());
    let mut ds = task.generate()?;
    // pad the last token of the first sequence
    let mut valid = vec![vec![true; n]; ds.len()];
    valid[0][n - 1] = false;
    let mut labels = ds.labels.clone().expect("synthetic data is labeled");
    labels[0][n - 1] = 0;
    ds = ds.with_valid_mask(valid)?.with_labels(labels, classes)?;
    let model = Rank1Model::new(d, g.random_range(2..=6), classes, depth, g.random())?;
    Ok((model, ds))
}

fn grad_check_cmd(a: &GradCheckArgs) -> Result<RunReport> {
    let mut worst = 0.0_f64;
    let mut per = Vec::new();
    for i in 0..a.configs {
        let (model, ds) = grad_check_config(a.common.seed, i)?;
        let idx: Vec<usize> = (0..ds.len()).collect();
        let rep = grad_check(&model, &ds, &idx, a.step)?;
        worst = worst.max(rep.max_rel_err);
        per.push(json!({"depth": model.depth(), "params": rep.params, "max_rel_err": rep.max_rel_err}));
    }
    let mut r = RunReport::new("grad-check", a.common.seed, config(a));
    r.push(Check::below("max_relative_error", worst, 1e-5, "backward pass vs central differences"));
    r.details = Value::Array(per);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(main(["ctxmap", "boltz-verify", "--bogus"]), 2);
        assert_eq!(main(["ctxmap", "nope"]), 2);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(main(["ctxmap", "--help"]), 0);
    }
}
