//! The staged optimization schedule and the comparison baselines.
//!
//! Stage one pretrains the encoder with a global head on the focal loss.
//! Stage two trains the four subset experts on frozen embeddings, with
//! the low-degree experts starting from their converged high-degree
//! sibling's convolution weight. Stage three distills the frozen experts
//! into two class-side students under a curriculum weight. Each stage
//! early-stops on validation Macro-F1 and restores its best checkpoint.
//!
//! Stage three receives only the embedding matrix and immutable expert
//! heads, so encoder and expert parameters are structurally frozen there.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{compute_metrics, ConfusionMatrix};
use crate::graph::Graph;
use crate::imbalance::SplitManifest;
use crate::model::{
    resolve_alpha, AlphaMode, ClassSide, Encoder, FocalConfig, Head, HeadScope, DEFAULT_HIDDEN,
};
use crate::num::adam::{AdamConfig, AdamState};
use crate::num::tape::{Gradients, NodeId, Tape};
use crate::num::{DenseMat, SparseMat};
use crate::partition::{Subset, SubsetPartition, DEFAULT_DEGREE_THRESHOLD, DEFAULT_HEAD_FRACTION};

const STAGE_PRETRAIN: u64 = 1;
const STAGE_EXPERTS: u64 = 2;
const STAGE_STUDENTS: u64 = 3;
const STAGE_BASELINE: u64 = 4;

/// Derives a per-stage RNG so separately invoked stages reproduce the
/// same streams regardless of what ran before them.
fn stage_rng(seed: u64, stage: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed.rotate_left(17) ^ stage.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Curriculum weight schedules for the distillation mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    /// `cos(e * pi / E^2)`; stays close to one for large budgets.
    Convex,
    /// `1 - e / E`; reaches zero at the final epoch.
    Linear,
    /// `cos(e * pi / (2 E))`; reaches zero at the final epoch.
    CosineHalf,
}

/// Distillation weight for epoch `epoch` of a `total`-epoch budget.
/// Every schedule starts at exactly 1 and strictly decreases.
pub fn beta_schedule(kind: SchedulerKind, epoch: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::contract("schedule over a zero-epoch budget"));
    }
    if epoch > total {
        return Err(Error::contract(format!(
            "epoch {epoch} beyond the {total}-epoch budget"
        )));
    }
    let e = epoch as f64;
    let budget = total as f64;
    Ok(match kind {
        SchedulerKind::Convex => (e * PI / (budget * budget)).cos(),
        SchedulerKind::Linear => 1.0 - e / budget,
        SchedulerKind::CosineHalf => (e * PI / (2.0 * budget)).cos(),
    })
}

/// Hyperparameters shared by every training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub head_fraction: f64,
    pub degree_threshold: usize,
    pub focal: FocalConfig,
    pub scheduler: SchedulerKind,
    pub finetune_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            weight_decay: 5e-4,
            hidden: DEFAULT_HIDDEN,
            max_epochs: 10_000,
            patience: 100,
            seed: 0,
            head_fraction: DEFAULT_HEAD_FRACTION,
            degree_threshold: DEFAULT_DEGREE_THRESHOLD,
            focal: FocalConfig::default(),
            scheduler: SchedulerKind::Convex,
            finetune_encoder: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay {}", self.weight_decay)));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("epoch budget must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be positive".into()));
        }
        if !(self.head_fraction > 0.0 && self.head_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "head fraction {} outside (0, 1]",
                self.head_fraction
            )));
        }
        self.focal.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEvent {
    pub stage: String,
    pub epoch: usize,
    pub loss: f64,
    pub val_macro_f1: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parts: BTreeMap<String, f64>,
}

/// Best-checkpoint tracking with an improvement-staleness counter.
struct EarlyStop {
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStop {
    fn new() -> Self {
        EarlyStop {
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records one observation; true when it improves on the best so far.
    fn observe(&mut self, epoch: usize, value: f64) -> bool {
        if value > self.best {
            self.best = value;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    fn exhausted(&self, patience: usize) -> bool {
        self.stale >= patience
    }
}

/// First index of the largest value; ties go to the lower index.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn macro_f1(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<f64> {
    let cm = ConfusionMatrix::from_labels(truth, predicted, num_classes)?;
    Ok(compute_metrics(&cm)?.macro_f1)
}

fn grad_of<'a>(grads: &'a Gradients, id: NodeId, what: &str) -> Result<&'a DenseMat> {
    grads
        .of(id)
        .ok_or_else(|| Error::contract(format!("no gradient reached the {what} parameter")))
}

fn train_class_counts(g: &Graph, manifest: &SplitManifest) -> Vec<usize> {
    let mut counts = vec![0usize; g.num_classes()];
    for &v in &manifest.train {
        counts[g.label(v)] += 1;
    }
    counts
}

enum GlobalLoss {
    Focal { alpha: Vec<f64>, gamma: f64 },
    CrossEntropy { weights: Option<Vec<f64>> },
}

struct GlobalFit {
    encoder: Encoder,
    head: Head,
    best_val_f1: f64,
    best_epoch: usize,
    events: Vec<TrainEvent>,
}

/// Shared driver for every encoder-plus-global-head optimization. The
/// model trains on `train_g` but is validated against `eval_g`, which
/// differs only for the over-sampling baseline.
fn fit_global(
    stage: &str,
    train_g: &Graph,
    train_nodes: &[usize],
    eval_g: &Graph,
    val_nodes: &[usize],
    loss_kind: &GlobalLoss,
    cfg: &TrainConfig,
    rng: &mut ChaCha20Rng,
) -> Result<GlobalFit> {
    if train_nodes.is_empty() {
        return Err(Error::contract(format!("{stage}: no training nodes")));
    }
    if val_nodes.is_empty() {
        return Err(Error::contract(format!("{stage}: no validation nodes")));
    }
    let num_classes = train_g.num_classes();
    let x = Rc::new(train_g.features_csr());
    let adj = Rc::new(train_g.normalized_adjacency());
    let eval_x = eval_g.features_csr();
    let eval_adj = eval_g.normalized_adjacency();
    let labels: Vec<usize> = train_nodes.iter().map(|&v| train_g.label(v)).collect();
    let val_truth: Vec<usize> = val_nodes.iter().map(|&v| eval_g.label(v)).collect();

    let mut encoder = Encoder::new(train_g.num_features(), cfg.hidden, rng)?;
    let mut head = Head::new(HeadScope::Global, (0..num_classes).collect(), cfg.hidden, rng)?;
    let adam = cfg.adam();
    let mut opt_enc = AdamState::new(encoder.weight.rows(), encoder.weight.cols());
    let mut opt_conv = AdamState::new(cfg.hidden, cfg.hidden);
    let mut opt_out = AdamState::new(cfg.hidden, num_classes);

    let mut best: Option<(Encoder, Head)> = None;
    let mut stop = EarlyStop::new();
    let mut events = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let mut tape = Tape::new();
        let we = encoder.forward(&mut tape, &x, &adj)?;
        let wh = head.forward(&mut tape, we.hidden, &adj)?;
        let probs = tape.row_softmax(wh.logits);
        let p_train = tape.select_rows(probs, train_nodes)?;
        let loss = match loss_kind {
            GlobalLoss::Focal { alpha, gamma } => tape.focal_loss(p_train, &labels, alpha, *gamma)?,
            GlobalLoss::CrossEntropy { weights } => {
                tape.cross_entropy(p_train, &labels, weights.as_deref())?
            }
        };
        let loss_value = tape.scalar(loss);
        if !loss_value.is_finite() {
            return Err(Error::Divergence(format!(
                "{stage}: non-finite loss {loss_value} at epoch {epoch}"
            )));
        }

        let val_probs = head.predict(&encoder.embed(&eval_x, &eval_adj)?, &eval_adj)?;
        let predicted: Vec<usize> = val_nodes.iter().map(|&v| argmax(val_probs.row(v))).collect();
        let val_f1 = macro_f1(&val_truth, &predicted, num_classes)?;
        events.push(TrainEvent {
            stage: stage.to_string(),
            epoch,
            loss: loss_value,
            val_macro_f1: val_f1,
            parts: BTreeMap::new(),
        });
        if stop.observe(epoch, val_f1) {
            best = Some((encoder.clone(), head.clone()));
        }
        if stop.exhausted(cfg.patience) {
            break;
        }

        let grads = tape.backward(loss)?;
        opt_enc.update(&adam, &mut encoder.weight, grad_of(&grads, we.weight, "encoder")?)?;
        opt_conv.update(
            &adam,
            &mut head.conv_weight,
            grad_of(&grads, wh.conv_weight, "head convolution")?,
        )?;
        opt_out.update(
            &adam,
            &mut head.out_weight,
            grad_of(&grads, wh.out_weight, "head output")?,
        )?;
    }
    let (encoder, head) = best.expect("at least one epoch always runs");
    Ok(GlobalFit {
        encoder,
        head,
        best_val_f1: stop.best,
        best_epoch: stop.best_epoch,
        events,
    })
}

/// Everything stage one hands to the rest of the pipeline.
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub encoder: Encoder,
    pub head: Head,
    /// Frozen embedding matrix of the best checkpoint, `n x hidden`.
    pub embeddings: DenseMat,
    /// Full-graph class probabilities of the best checkpoint, `n x |C|`.
    pub probabilities: DenseMat,
    pub best_val_f1: f64,
    pub best_epoch: usize,
    pub events: Vec<TrainEvent>,
}

/// Stage one: encoder plus global head on the focal loss, class weights
/// resolved from the actual per-class training counts.
pub fn pretrain(g: &Graph, manifest: &SplitManifest, cfg: &TrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    manifest.validate(g)?;
    let counts = train_class_counts(g, manifest);
    let alpha = cfg.focal.resolve(&counts)?;
    let mut rng = stage_rng(cfg.seed, STAGE_PRETRAIN);
    let fit = fit_global(
        "pretrain",
        g,
        &manifest.train,
        g,
        &manifest.val,
        &GlobalLoss::Focal {
            alpha,
            gamma: cfg.focal.gamma,
        },
        cfg,
        &mut rng,
    )?;
    let x = g.features_csr();
    let adj = g.normalized_adjacency();
    let embeddings = fit.encoder.embed(&x, &adj)?;
    let probabilities = fit.head.predict(&embeddings, &adj)?;
    Ok(PretrainOutcome {
        encoder: fit.encoder,
        head: fit.head,
        embeddings,
        probabilities,
        best_val_f1: fit.best_val_f1,
        best_epoch: fit.best_epoch,
        events: fit.events,
    })
}

/// One trained (or substituted) subset expert.
#[derive(Debug, Clone)]
pub struct ExpertOutcome {
    pub head: Head,
    pub best_val_f1: f64,
    pub best_epoch: usize,
    /// Largest absolute difference between this expert's convolution
    /// weight at initialization and the sibling weight it was copied
    /// from; zero by construction, recorded as evidence.
    pub conv_init_gap: Option<f64>,
    /// Set when this subset had no training nodes and the degree
    /// sibling's trained head was substituted.
    pub substituted_from: Option<Subset>,
}

/// The four experts keyed by subset.
#[derive(Debug, Clone)]
pub struct TrainedExperts {
    pub hh: ExpertOutcome,
    pub ht: ExpertOutcome,
    pub th: ExpertOutcome,
    pub tt: ExpertOutcome,
}

impl TrainedExperts {
    pub fn get(&self, s: Subset) -> &ExpertOutcome {
        match s {
            Subset::Hh => &self.hh,
            Subset::Ht => &self.ht,
            Subset::Th => &self.th,
            Subset::Tt => &self.tt,
        }
    }
}

/// Stage two output: the experts plus the (possibly finetuned) encoder
/// and the embedding matrix every later stage consumes.
#[derive(Debug, Clone)]
pub struct ExpertStage {
    pub experts: TrainedExperts,
    pub encoder: Encoder,
    pub embeddings: DenseMat,
    pub events: Vec<TrainEvent>,
}

struct ExpertCtx<'a> {
    g: &'a Graph,
    manifest: &'a SplitManifest,
    partition: &'a SubsetPartition,
    x: &'a Rc<SparseMat>,
    adj: &'a Rc<SparseMat>,
    cfg: &'a TrainConfig,
}

/// Validation nodes for one expert: the subset's own class-side and
/// degree bucket, widened to the whole class side when that bucket has
/// no validation nodes.
fn expert_val_nodes(ctx: &ExpertCtx, subset: Subset) -> Result<Vec<usize>> {
    let mut side = Vec::new();
    for &v in &ctx.manifest.val {
        if ctx.partition.is_head_class(ctx.g.label(v)) == subset.is_head_class_side() {
            side.push(v);
        }
    }
    let low_wanted = matches!(subset, Subset::Ht | Subset::Tt);
    let mut bucket = Vec::new();
    for &v in &side {
        if (ctx.g.degree(v)? <= ctx.partition.degree_threshold) == low_wanted {
            bucket.push(v);
        }
    }
    if !bucket.is_empty() {
        Ok(bucket)
    } else if !side.is_empty() {
        Ok(side)
    } else {
        Err(Error::contract(format!(
            "no validation nodes on the {} expert's class side",
            subset.name()
        )))
    }
}

fn train_one_expert(
    ctx: &ExpertCtx,
    subset: Subset,
    encoder: &mut Encoder,
    conv_init: Option<&DenseMat>,
    rng: &mut ChaCha20Rng,
    events: &mut Vec<TrainEvent>,
) -> Result<Option<ExpertOutcome>> {
    let train_nodes = ctx.partition.subset(subset);
    if train_nodes.is_empty() {
        return Ok(None);
    }
    let stage = format!("expert_{}", subset.name().to_lowercase());
    let class_set = ctx.partition.class_side(subset).to_vec();
    let mut head = Head::new(HeadScope::Expert(subset), class_set, ctx.cfg.hidden, rng)?;
    let conv_init_gap = conv_init.map(|w| {
        head.conv_weight = w.clone();
        head.conv_weight.max_abs_diff(w)
    });
    let labels = head.local_labels(ctx.g.labels(), train_nodes)?;
    let val_nodes = expert_val_nodes(ctx, subset)?;
    let val_truth: Vec<usize> = val_nodes.iter().map(|&v| ctx.g.label(v)).collect();
    let mut h_pre = encoder.embed(ctx.x, ctx.adj)?;

    let adam = ctx.cfg.adam();
    let mut opt_enc = AdamState::new(encoder.weight.rows(), encoder.weight.cols());
    let mut opt_conv = AdamState::new(ctx.cfg.hidden, ctx.cfg.hidden);
    let mut opt_out = AdamState::new(ctx.cfg.hidden, head.num_local());
    let mut best: Option<(Head, Encoder)> = None;
    let mut stop = EarlyStop::new();
    for epoch in 0..ctx.cfg.max_epochs {
        let mut tape = Tape::new();
        let (enc_leaf, h_node) = if ctx.cfg.finetune_encoder {
            let we = encoder.forward(&mut tape, ctx.x, ctx.adj)?;
            (Some(we.weight), we.hidden)
        } else {
            (None, tape.constant(h_pre.clone()))
        };
        let wh = head.forward(&mut tape, h_node, ctx.adj)?;
        let probs = tape.row_softmax(wh.logits);
        let p_train = tape.select_rows(probs, train_nodes)?;
        let loss = tape.cross_entropy(p_train, &labels, None)?;
        let loss_value = tape.scalar(loss);
        if !loss_value.is_finite() {
            return Err(Error::Divergence(format!(
                "{stage}: non-finite loss {loss_value} at epoch {epoch}"
            )));
        }

        let val_probs = head.predict(&h_pre, ctx.adj)?;
        let predicted: Vec<usize> = val_nodes
            .iter()
            .map(|&v| head.global_of_local(argmax(val_probs.row(v))))
            .collect();
        let val_f1 = macro_f1(&val_truth, &predicted, ctx.g.num_classes())?;
        events.push(TrainEvent {
            stage: stage.clone(),
            epoch,
            loss: loss_value,
            val_macro_f1: val_f1,
            parts: BTreeMap::new(),
        });
        if stop.observe(epoch, val_f1) {
            best = Some((head.clone(), encoder.clone()));
        }
        if stop.exhausted(ctx.cfg.patience) {
            break;
        }

        let grads = tape.backward(loss)?;
        opt_conv.update(
            &adam,
            &mut head.conv_weight,
            grad_of(&grads, wh.conv_weight, "expert convolution")?,
        )?;
        opt_out.update(
            &adam,
            &mut head.out_weight,
            grad_of(&grads, wh.out_weight, "expert output")?,
        )?;
        if let Some(enc_leaf) = enc_leaf {
            opt_enc.update(&adam, &mut encoder.weight, grad_of(&grads, enc_leaf, "encoder")?)?;
            h_pre = encoder.embed(ctx.x, ctx.adj)?;
        }
    }
    let (best_head, best_encoder) = best.expect("at least one epoch always runs");
    if ctx.cfg.finetune_encoder {
        *encoder = best_encoder;
    }
    Ok(Some(ExpertOutcome {
        head: best_head,
        best_val_f1: stop.best,
        best_epoch: stop.best_epoch,
        conv_init_gap,
        substituted_from: None,
    }))
}

/// Fills an empty subset's slot with its degree sibling's trained head.
fn resolve_side(
    high: Option<ExpertOutcome>,
    low: Option<ExpertOutcome>,
    high_subset: Subset,
    low_subset: Subset,
) -> Result<(ExpertOutcome, ExpertOutcome)> {
    let substitute = |from: &ExpertOutcome, origin: Subset| ExpertOutcome {
        head: from.head.clone(),
        best_val_f1: from.best_val_f1,
        best_epoch: from.best_epoch,
        conv_init_gap: None,
        substituted_from: Some(origin),
    };
    match (high, low) {
        (Some(h), Some(l)) => Ok((h, l)),
        (Some(h), None) => {
            let l = substitute(&h, high_subset);
            Ok((h, l))
        }
        (None, Some(l)) => {
            let h = substitute(&l, low_subset);
            Ok((h, l))
        }
        (None, None) => Err(Error::Config(format!(
            "no training nodes in either {} or {}",
            high_subset.name(),
            low_subset.name()
        ))),
    }
}

/// Stage two: trains the high-degree experts first, then the low-degree
/// experts with convolution weights copied from their converged
/// siblings. With `finetune_encoder` the encoder keeps training through
/// each expert in sequence and the embeddings are recomputed at the end.
pub fn train_experts(
    g: &Graph,
    manifest: &SplitManifest,
    partition: &SubsetPartition,
    encoder: &Encoder,
    cfg: &TrainConfig,
) -> Result<ExpertStage> {
    cfg.validate()?;
    if Subset::ALL.iter().all(|&s| partition.subset(s).is_empty()) {
        return Err(Error::Config(
            "every balanced training subset is empty".into(),
        ));
    }
    let x = Rc::new(g.features_csr());
    let adj = Rc::new(g.normalized_adjacency());
    let ctx = ExpertCtx {
        g,
        manifest,
        partition,
        x: &x,
        adj: &adj,
        cfg,
    };
    let mut encoder = encoder.clone();
    let mut rng = stage_rng(cfg.seed, STAGE_EXPERTS);
    let mut events = Vec::new();

    let hh = train_one_expert(&ctx, Subset::Hh, &mut encoder, None, &mut rng, &mut events)?;
    let th = train_one_expert(&ctx, Subset::Th, &mut encoder, None, &mut rng, &mut events)?;
    let ht = train_one_expert(
        &ctx,
        Subset::Ht,
        &mut encoder,
        hh.as_ref().map(|o| &o.head.conv_weight),
        &mut rng,
        &mut events,
    )?;
    let tt = train_one_expert(
        &ctx,
        Subset::Tt,
        &mut encoder,
        th.as_ref().map(|o| &o.head.conv_weight),
        &mut rng,
        &mut events,
    )?;
    let (hh, ht) = resolve_side(hh, ht, Subset::Hh, Subset::Ht)?;
    let (th, tt) = resolve_side(th, tt, Subset::Th, Subset::Tt)?;
    let embeddings = encoder.embed(&x, &adj)?;
    Ok(ExpertStage {
        experts: TrainedExperts { hh, ht, th, tt },
        encoder,
        embeddings,
        events,
    })
}

/// Stage three output.
#[derive(Debug, Clone)]
pub struct StudentStage {
    pub head_student: Head,
    pub tail_student: Head,
    pub best_val_f1: f64,
    pub best_epoch: usize,
    pub events: Vec<TrainEvent>,
}

/// Stage three: distills the frozen experts into one student per class
/// side. Each epoch mixes the high-degree expert's distillation term
/// (weight `beta`) with the low-degree expert's (weight `1 - beta`) and
/// adds each side's cross-entropy over its training nodes. Validation
/// routes nodes with the caller-provided side assignment and scores
/// Macro-F1 over the routed predictions.
pub fn train_students(
    g: &Graph,
    partition: &SubsetPartition,
    embeddings: &DenseMat,
    experts: &TrainedExperts,
    val_routes: &[(usize, ClassSide)],
    cfg: &TrainConfig,
) -> Result<StudentStage> {
    cfg.validate()?;
    if val_routes.is_empty() {
        return Err(Error::contract("no routed validation nodes"));
    }
    let adj = Rc::new(g.normalized_adjacency());
    let v_head = partition.head_side_nodes();
    let v_tail = partition.tail_side_nodes();
    if v_head.is_empty() || v_tail.is_empty() {
        return Err(Error::Config(
            "a class side has no training nodes for its student".into(),
        ));
    }

    let mut rng = stage_rng(cfg.seed, STAGE_STUDENTS);
    let mut head_student = Head::new(
        HeadScope::Student(ClassSide::Head),
        partition.head_classes.clone(),
        cfg.hidden,
        &mut rng,
    )?;
    let mut tail_student = Head::new(
        HeadScope::Student(ClassSide::Tail),
        partition.tail_classes.clone(),
        cfg.hidden,
        &mut rng,
    )?;
    let labels_head = head_student.local_labels(g.labels(), &v_head)?;
    let labels_tail = tail_student.local_labels(g.labels(), &v_tail)?;
    let val_truth: Vec<usize> = val_routes.iter().map(|&(v, _)| g.label(v)).collect();

    struct KdTerm {
        side: ClassSide,
        high_degree: bool,
        label: String,
        nodes: Vec<usize>,
        teacher: Rc<DenseMat>,
    }
    let mut kd_terms = Vec::new();
    for side in ClassSide::BOTH {
        let [high, low] = side.experts();
        for (subset, high_degree) in [(high, true), (low, false)] {
            let nodes = partition.subset(subset).to_vec();
            if nodes.is_empty() {
                continue;
            }
            let p_full = experts.get(subset).head.predict(embeddings, &adj)?;
            let mut teacher = DenseMat::zeros(nodes.len(), p_full.cols());
            for (i, &v) in nodes.iter().enumerate() {
                teacher.row_mut(i).copy_from_slice(p_full.row(v));
            }
            kd_terms.push(KdTerm {
                side,
                high_degree,
                label: format!("kd_{}", subset.name().to_lowercase()),
                nodes,
                teacher: Rc::new(teacher),
            });
        }
    }

    let adam = cfg.adam();
    let mut opt_h_conv = AdamState::new(cfg.hidden, cfg.hidden);
    let mut opt_h_out = AdamState::new(cfg.hidden, head_student.num_local());
    let mut opt_t_conv = AdamState::new(cfg.hidden, cfg.hidden);
    let mut opt_t_out = AdamState::new(cfg.hidden, tail_student.num_local());
    let mut best: Option<(Head, Head)> = None;
    let mut stop = EarlyStop::new();
    let mut events = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let beta = beta_schedule(cfg.scheduler, epoch, cfg.max_epochs)?;
        let mut tape = Tape::new();
        let h_node = tape.constant(embeddings.clone());
        let wh = head_student.forward(&mut tape, h_node, &adj)?;
        let wt = tail_student.forward(&mut tape, h_node, &adj)?;
        let probs_head = tape.row_softmax(wh.logits);
        let probs_tail = tape.row_softmax(wt.logits);

        let mut parts = BTreeMap::new();
        parts.insert("beta".to_string(), beta);
        let mut terms: Vec<(f64, NodeId)> = Vec::new();
        for term in &kd_terms {
            let student_probs = match term.side {
                ClassSide::Head => probs_head,
                ClassSide::Tail => probs_tail,
            };
            let rows = tape.select_rows(student_probs, &term.nodes)?;
            let kd = tape.distillation_loss(Rc::clone(&term.teacher), rows)?;
            let weight = if term.high_degree { beta } else { 1.0 - beta };
            terms.push((weight, kd));
            parts.insert(term.label.clone(), tape.scalar(kd));
        }
        let ce_head = {
            let rows = tape.select_rows(probs_head, &v_head)?;
            tape.cross_entropy(rows, &labels_head, None)?
        };
        let ce_tail = {
            let rows = tape.select_rows(probs_tail, &v_tail)?;
            tape.cross_entropy(rows, &labels_tail, None)?
        };
        terms.push((1.0, ce_head));
        terms.push((1.0, ce_tail));
        let total = tape.add_scaled(&terms)?;
        let loss_value = tape.scalar(total);
        if !loss_value.is_finite() {
            return Err(Error::Divergence(format!(
                "students: non-finite loss {loss_value} at epoch {epoch}"
            )));
        }
        parts.insert("ce_head".to_string(), tape.scalar(ce_head));
        parts.insert("ce_tail".to_string(), tape.scalar(ce_tail));
        let side_mix = |hi: &str, lo: &str, parts: &BTreeMap<String, f64>| {
            beta * parts.get(hi).copied().unwrap_or(0.0)
                + (1.0 - beta) * parts.get(lo).copied().unwrap_or(0.0)
        };
        let student_head_loss = side_mix("kd_hh", "kd_ht", &parts);
        let student_tail_loss = side_mix("kd_th", "kd_tt", &parts);
        parts.insert("loss_student_head".to_string(), student_head_loss);
        parts.insert("loss_student_tail".to_string(), student_tail_loss);
        parts.insert(
            "loss_ce".to_string(),
            tape.scalar(ce_head) + tape.scalar(ce_tail),
        );

        let predicted: Vec<usize> = val_routes
            .iter()
            .map(|&(v, side)| match side {
                ClassSide::Head => {
                    head_student.global_of_local(argmax(tape.value(probs_head).row(v)))
                }
                ClassSide::Tail => {
                    tail_student.global_of_local(argmax(tape.value(probs_tail).row(v)))
                }
            })
            .collect();
        let val_f1 = macro_f1(&val_truth, &predicted, g.num_classes())?;
        events.push(TrainEvent {
            stage: "students".to_string(),
            epoch,
            loss: loss_value,
            val_macro_f1: val_f1,
            parts,
        });
        if stop.observe(epoch, val_f1) {
            best = Some((head_student.clone(), tail_student.clone()));
        }
        if stop.exhausted(cfg.patience) {
            break;
        }

        let grads = tape.backward(total)?;
        opt_h_conv.update(
            &adam,
            &mut head_student.conv_weight,
            grad_of(&grads, wh.conv_weight, "head-student convolution")?,
        )?;
        opt_h_out.update(
            &adam,
            &mut head_student.out_weight,
            grad_of(&grads, wh.out_weight, "head-student output")?,
        )?;
        opt_t_conv.update(
            &adam,
            &mut tail_student.conv_weight,
            grad_of(&grads, wt.conv_weight, "tail-student convolution")?,
        )?;
        opt_t_out.update(
            &adam,
            &mut tail_student.out_weight,
            grad_of(&grads, wt.out_weight, "tail-student output")?,
        )?;
    }
    let (head_student, tail_student) = best.expect("at least one epoch always runs");
    Ok(StudentStage {
        head_student,
        tail_student,
        best_val_f1: stop.best,
        best_epoch: stop.best_epoch,
        events,
    })
}

/// Every trained parameter of the full pipeline plus its training log,
/// serializable as a single checkpoint that reloads bit for bit. The
/// students are absent when distillation was disabled. Optimizer state
/// is not kept: each stage runs to its early-stopping conclusion in one
/// call, so there is nothing to resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub encoder: Encoder,
    pub global_head: Head,
    pub expert_hh: Head,
    pub expert_ht: Head,
    pub expert_th: Head,
    pub expert_tt: Head,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub student_head: Option<Head>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub student_tail: Option<Head>,
    pub events: Vec<TrainEvent>,
}

impl ModelBundle {
    pub fn expert(&self, s: Subset) -> &Head {
        match s {
            Subset::Hh => &self.expert_hh,
            Subset::Ht => &self.expert_ht,
            Subset::Th => &self.expert_th,
            Subset::Tt => &self.expert_tt,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Checkpoint for a trained baseline: its parameters and training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineBundle {
    pub kind: BaselineKind,
    pub encoder: Encoder,
    pub head: Head,
    pub events: Vec<TrainEvent>,
}

impl BaselineBundle {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// The imbalance-handling baselines trained for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Plain cross-entropy.
    Origin,
    /// Cross-entropy weighted by inverse class frequency.
    Reweight,
    /// Training-set duplication of below-mean classes.
    Oversample,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Origin => "origin",
            BaselineKind::Reweight => "reweight",
            BaselineKind::Oversample => "oversample",
        }
    }
}

/// A trained baseline, with embeddings and probabilities evaluated on
/// the original graph.
#[derive(Debug, Clone)]
pub struct TrainedBaseline {
    pub kind: BaselineKind,
    pub encoder: Encoder,
    pub head: Head,
    pub embeddings: DenseMat,
    pub probabilities: DenseMat,
    pub best_val_f1: f64,
    pub best_epoch: usize,
    pub events: Vec<TrainEvent>,
}

/// Clones every training node of each below-mean class once. The clone
/// copies the source's feature row, label, and adjacency row, and joins
/// the training set; all original node ids are unchanged.
pub fn oversampled_graph(
    g: &Graph,
    manifest: &SplitManifest,
) -> Result<(Graph, Vec<usize>, Vec<usize>)> {
    let counts = train_class_counts(g, manifest);
    let active: Vec<usize> = (0..g.num_classes()).filter(|&c| counts[c] > 0).collect();
    if active.is_empty() {
        return Err(Error::contract("over-sampling with no training nodes"));
    }
    let mean = active.iter().map(|&c| counts[c]).sum::<usize>() as f64 / active.len() as f64;
    let sources: Vec<usize> = manifest
        .train
        .iter()
        .copied()
        .filter(|&v| (counts[g.label(v)] as f64) < mean)
        .collect();

    let n = g.n();
    let mut features = DenseMat::zeros(n + sources.len(), g.num_features());
    for v in 0..n {
        features.row_mut(v).copy_from_slice(g.features().row(v));
    }
    let mut labels = g.labels().to_vec();
    let mut edges: Vec<(usize, usize)> = g.edges().to_vec();
    for (i, &src) in sources.iter().enumerate() {
        let clone_id = n + i;
        features
            .row_mut(clone_id)
            .copy_from_slice(g.features().row(src));
        labels.push(g.label(src));
        for &nbr in g.neighbors(src)? {
            edges.push((clone_id, nbr));
        }
    }
    let augmented = Graph::new(g.num_classes(), features, labels, &edges)?;
    let mut train = manifest.train.clone();
    train.extend(n..n + sources.len());
    Ok((augmented, train, sources))
}

/// Trains one baseline end to end and evaluates it on the original
/// graph.
pub fn train_baseline(
    g: &Graph,
    manifest: &SplitManifest,
    cfg: &TrainConfig,
    kind: BaselineKind,
) -> Result<TrainedBaseline> {
    cfg.validate()?;
    manifest.validate(g)?;
    let mut rng = stage_rng(cfg.seed, STAGE_BASELINE);
    let stage = format!("baseline_{}", kind.name());
    let fit = match kind {
        BaselineKind::Origin => fit_global(
            &stage,
            g,
            &manifest.train,
            g,
            &manifest.val,
            &GlobalLoss::CrossEntropy { weights: None },
            cfg,
            &mut rng,
        )?,
        BaselineKind::Reweight => {
            let counts = train_class_counts(g, manifest);
            let weights = resolve_alpha(AlphaMode::InverseFrequency, &counts)?;
            fit_global(
                &stage,
                g,
                &manifest.train,
                g,
                &manifest.val,
                &GlobalLoss::CrossEntropy {
                    weights: Some(weights),
                },
                cfg,
                &mut rng,
            )?
        }
        BaselineKind::Oversample => {
            let (augmented, train, _) = oversampled_graph(g, manifest)?;
            fit_global(
                &stage,
                &augmented,
                &train,
                g,
                &manifest.val,
                &GlobalLoss::CrossEntropy { weights: None },
                cfg,
                &mut rng,
            )?
        }
    };
    let x = g.features_csr();
    let adj = g.normalized_adjacency();
    let embeddings = fit.encoder.embed(&x, &adj)?;
    let probabilities = fit.head.predict(&embeddings, &adj)?;
    Ok(TrainedBaseline {
        kind,
        encoder: fit.encoder,
        head: fit.head,
        embeddings,
        probabilities,
        best_val_f1: fit.best_val_f1,
        best_epoch: fit.best_epoch,
        events: fit.events,
    })
}
