//! Experiment orchestration: the prepare→train→infer→evaluate pipeline
//! for each seed, the on-disk artifact layout, and cross-seed
//! aggregation.
//!
//! Layout under the configured output directory:
//!
//! ```text
//! config.json            effective configuration snapshot
//! summary.json           per-seed metrics plus mean/std aggregates
//! summary.csv
//! seed_<s>/
//!   manifest.json        train/val/test node sets and protocol record
//!   partition.json       the balanced training subsets
//!   bundle.json          trained parameters (reloads bit for bit)
//!   prototypes.json      cached prototype table (full pipeline only)
//!   events.jsonl         one training-log line per epoch
//!   predictions.tsv      node_id, routed_student, c_star, predicted, true
//!   metrics.json         seed report (metrics, per-class, subsets)
//!   metrics.csv
//! ```
//!
//! Every file is written deterministically: rerunning an identical
//! configuration reproduces each artifact byte for byte. Stage failures
//! are tagged with the seed and stage name, and artifacts written before
//! the failure are left in place.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method, ProtocolKind};
use crate::error::{Error, Result};
use crate::eval::{
    compute_report, report_csv, subset_breakdown, ConfusionMatrix, MetricsReport, SubsetReport,
};
use crate::graph::io::load_dataset;
use crate::graph::Graph;
use crate::imbalance::{
    apply_longtail_with_quotas, apply_manual_with_quotas, split_natural, SplitManifest,
};
use crate::inference::{
    predict_all, predictions_tsv, route_node, PredictionRow, PrototypeTable,
};
use crate::model::ClassSide;
use crate::partition::{make_subsets_with_mode, SplitMode, Subset, SubsetPartition};
use crate::training::{
    pretrain, train_baseline, train_experts, train_students, BaselineBundle, BaselineKind,
    ModelBundle, TrainConfig, TrainEvent,
};

/// Artifact directory for one seed.
pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn read_artifact(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::contract(format!(
            "cannot read {} ({e}); run the earlier pipeline stages first",
            path.display()
        ))
    })
}

fn tag<T>(r: Result<T>, seed: u64, stage: &str) -> Result<T> {
    r.map_err(|e| Error::in_stage(seed, stage, e))
}

/// Builds the split manifest the configured protocol prescribes.
pub fn build_manifest(g: &Graph, cfg: &ExperimentConfig, seed: u64) -> Result<SplitManifest> {
    let p = &cfg.protocol;
    match p.kind {
        ProtocolKind::Manual => apply_manual_with_quotas(
            g,
            p.imb_classes,
            p.imb_ratio,
            seed,
            p.train_quota,
            p.val_quota,
            p.test_quota,
        ),
        ProtocolKind::Longtail => {
            apply_longtail_with_quotas(g, p.imb_ratio, seed, p.val_quota, p.test_quota)
        }
        ProtocolKind::Natural => split_natural(g, seed),
    }
}

/// Splits the training set into the four subsets, randomized when the
/// ablation flag asks for it.
pub fn build_partition(
    g: &Graph,
    manifest: &SplitManifest,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<SubsetPartition> {
    let mode = if cfg.random_split {
        SplitMode::random(seed)
    } else {
        SplitMode::balanced()
    };
    make_subsets_with_mode(
        manifest,
        g,
        cfg.train.head_fraction,
        cfg.train.degree_threshold,
        mode,
    )
}

/// Builds and writes the manifest and partition for one seed.
pub fn prepare_seed(
    g: &Graph,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(SplitManifest, SubsetPartition)> {
    let manifest = tag(build_manifest(g, cfg, seed), seed, "prepare")?;
    let partition = tag(build_partition(g, manifest_ref(&manifest), cfg, seed), seed, "prepare")?;
    let dir = seed_dir(&cfg.out, seed);
    tag(
        write_text(&dir.join("manifest.json"), &manifest.to_json()?),
        seed,
        "prepare",
    )?;
    tag(
        write_text(&dir.join("partition.json"), &partition.to_json()?),
        seed,
        "prepare",
    )?;
    Ok((manifest, partition))
}

// Borrow helper keeping prepare_seed readable.
fn manifest_ref(m: &SplitManifest) -> &SplitManifest {
    m
}

/// The checkpoint written by the train stage: either the full pipeline's
/// parameters or a baseline's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Checkpoint {
    Full(ModelBundle),
    Baseline(BaselineBundle),
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn events(&self) -> &[TrainEvent] {
        match self {
            Checkpoint::Full(b) => &b.events,
            Checkpoint::Baseline(b) => &b.events,
        }
    }
}

fn events_jsonl(events: &[TrainEvent]) -> Result<String> {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    Ok(out)
}

/// Trains the configured method for one seed and writes its checkpoint,
/// cached prototypes (full pipeline), and event log.
pub fn train_seed(
    g: &Graph,
    cfg: &ExperimentConfig,
    seed: u64,
    manifest: &SplitManifest,
    partition: &SubsetPartition,
) -> Result<(Checkpoint, Option<PrototypeTable>)> {
    let tcfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let dir = seed_dir(&cfg.out, seed);
    let (checkpoint, table) = match cfg.method {
        Method::Lte4g => {
            let pre = tag(pretrain(g, manifest, &tcfg), seed, "pretrain")?;
            let experts = tag(
                train_experts(g, manifest, partition, &pre.encoder, &tcfg),
                seed,
                "experts",
            )?;
            let table = tag(
                PrototypeTable::build(
                    g,
                    manifest,
                    &pre.probabilities,
                    &experts.embeddings,
                    &cfg.routing,
                ),
                seed,
                "prototypes",
            )?;
            let mut events = pre.events;
            events.extend(experts.events.iter().cloned());
            let (student_head, student_tail) = if cfg.distill {
                let routes: Vec<(usize, ClassSide)> = tag(
                    manifest
                        .val
                        .iter()
                        .map(|&v| {
                            route_node(v, &table, &experts.embeddings, partition)
                                .map(|r| (v, r.side))
                        })
                        .collect(),
                    seed,
                    "students",
                )?;
                let students = tag(
                    train_students(
                        g,
                        partition,
                        &experts.embeddings,
                        &experts.experts,
                        &routes,
                        &tcfg,
                    ),
                    seed,
                    "students",
                )?;
                events.extend(students.events.iter().cloned());
                (Some(students.head_student), Some(students.tail_student))
            } else {
                (None, None)
            };
            let bundle = ModelBundle {
                encoder: experts.encoder,
                global_head: pre.head,
                expert_hh: experts.experts.hh.head,
                expert_ht: experts.experts.ht.head,
                expert_th: experts.experts.th.head,
                expert_tt: experts.experts.tt.head,
                student_head,
                student_tail,
                events,
            };
            (Checkpoint::Full(bundle), Some(table))
        }
        Method::Origin | Method::Reweight | Method::Oversample => {
            let kind = match cfg.method {
                Method::Origin => BaselineKind::Origin,
                Method::Reweight => BaselineKind::Reweight,
                _ => BaselineKind::Oversample,
            };
            let trained = tag(train_baseline(g, manifest, &tcfg, kind), seed, "baseline")?;
            let bundle = BaselineBundle {
                kind,
                encoder: trained.encoder,
                head: trained.head,
                events: trained.events,
            };
            (Checkpoint::Baseline(bundle), None)
        }
    };
    tag(
        write_text(&dir.join("bundle.json"), &checkpoint.to_json()?),
        seed,
        "train",
    )?;
    if let Some(table) = &table {
        tag(
            write_text(
                &dir.join("prototypes.json"),
                &serde_json::to_string_pretty(table)?,
            ),
            seed,
            "train",
        )?;
    }
    tag(
        write_text(&dir.join("events.jsonl"), &events_jsonl(checkpoint.events())?),
        seed,
        "train",
    )?;
    Ok((checkpoint, table))
}

/// Predictions over the evaluation set, ready for scoring and TSV
/// emission. Baselines have no routing, so the routed fields carry
/// `global` and the predicted class.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedPredictions {
    pub tsv: String,
    pub nodes: Vec<usize>,
    pub predicted: Vec<usize>,
    pub truth: Vec<usize>,
    pub routing_accuracy: Option<f64>,
    pub warnings: Vec<String>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Expert-only prediction for the distillation-off ablation: the route
/// picks the class side, the node's own degree group picks the expert.
fn expert_predictions(
    g: &Graph,
    nodes: &[usize],
    table: &PrototypeTable,
    embeddings: &crate::num::DenseMat,
    bundle: &ModelBundle,
    partition: &SubsetPartition,
) -> Result<SeedPredictions> {
    let adj = g.normalized_adjacency();
    let mut probs = BTreeMap::new();
    for s in Subset::ALL {
        probs.insert(s.name(), bundle.expert(s).predict(embeddings, &adj)?);
    }
    let mut rows = Vec::with_capacity(nodes.len());
    let mut warnings = Vec::new();
    let mut routed_right = 0usize;
    for &v in nodes {
        let route = route_node(v, table, embeddings, partition)?;
        if route.degenerate {
            warnings.push(format!(
                "node {v}: zero-norm embedding, routed to class {} by tie-break",
                route.c_star
            ));
        }
        let low = g.degree(v)? <= partition.degree_threshold;
        let subset = match (route.side, low) {
            (ClassSide::Head, false) => Subset::Hh,
            (ClassSide::Head, true) => Subset::Ht,
            (ClassSide::Tail, false) => Subset::Th,
            (ClassSide::Tail, true) => Subset::Tt,
        };
        let expert = bundle.expert(subset);
        let predicted = expert.global_of_local(argmax(probs[subset.name()].row(v)));
        let truth = g.label(v);
        let truth_side = if partition.is_head_class(truth) {
            ClassSide::Head
        } else {
            ClassSide::Tail
        };
        if route.side == truth_side {
            routed_right += 1;
        }
        rows.push(PredictionRow {
            node: v,
            routed: route.side,
            c_star: route.c_star,
            predicted,
            truth,
        });
    }
    Ok(SeedPredictions {
        tsv: predictions_tsv(&rows),
        nodes: rows.iter().map(|r| r.node).collect(),
        predicted: rows.iter().map(|r| r.predicted).collect(),
        truth: rows.iter().map(|r| r.truth).collect(),
        routing_accuracy: Some(routed_right as f64 / nodes.len() as f64),
        warnings,
    })
}

/// Runs inference for one seed over the manifest's test nodes and writes
/// `predictions.tsv`.
pub fn infer_seed(
    g: &Graph,
    cfg: &ExperimentConfig,
    seed: u64,
    manifest: &SplitManifest,
    partition: &SubsetPartition,
    checkpoint: &Checkpoint,
    prototypes: Option<&PrototypeTable>,
) -> Result<SeedPredictions> {
    let run = || -> Result<SeedPredictions> {
        if manifest.test.is_empty() {
            return Err(Error::contract("the manifest has no test nodes"));
        }
        let x = g.features_csr();
        let adj = g.normalized_adjacency();
        match checkpoint {
            Checkpoint::Full(bundle) => {
                let table = prototypes.ok_or_else(|| {
                    Error::contract("the full pipeline needs the cached prototype table")
                })?;
                let embeddings = bundle.encoder.embed(&x, &adj)?;
                match (&bundle.student_head, &bundle.student_tail) {
                    (Some(hs), Some(ts)) => {
                        let outcome = predict_all(
                            g,
                            &manifest.test,
                            table,
                            &embeddings,
                            hs,
                            ts,
                            partition,
                        )?;
                        Ok(SeedPredictions {
                            tsv: predictions_tsv(&outcome.rows),
                            nodes: outcome.rows.iter().map(|r| r.node).collect(),
                            predicted: outcome.rows.iter().map(|r| r.predicted).collect(),
                            truth: outcome.rows.iter().map(|r| r.truth).collect(),
                            routing_accuracy: Some(outcome.routing_accuracy),
                            warnings: outcome.warnings,
                        })
                    }
                    _ => expert_predictions(
                        g,
                        &manifest.test,
                        table,
                        &embeddings,
                        bundle,
                        partition,
                    ),
                }
            }
            Checkpoint::Baseline(bundle) => {
                let embeddings = bundle.encoder.embed(&x, &adj)?;
                let probs = bundle.head.predict(&embeddings, &adj)?;
                let mut tsv =
                    String::from("node_id\trouted_student\tc_star\tpredicted_class\ttrue_class\n");
                let mut nodes = Vec::new();
                let mut predicted = Vec::new();
                let mut truth = Vec::new();
                for &v in &manifest.test {
                    let p = bundle.head.global_of_local(argmax(probs.row(v)));
                    let t = g.label(v);
                    tsv.push_str(&format!("{v}\tglobal\t{p}\t{p}\t{t}\n"));
                    nodes.push(v);
                    predicted.push(p);
                    truth.push(t);
                }
                Ok(SeedPredictions {
                    tsv,
                    nodes,
                    predicted,
                    truth,
                    routing_accuracy: None,
                    warnings: Vec::new(),
                })
            }
        }
    };
    let preds = tag(run(), seed, "infer")?;
    tag(
        write_text(&seed_dir(&cfg.out, seed).join("predictions.tsv"), &preds.tsv),
        seed,
        "infer",
    )?;
    Ok(preds)
}

/// Reads predictions back from TSV. The routed and c-star columns are
/// kept as text so baseline rows (`global`) parse too.
pub fn parse_predictions_tsv(text: &str) -> Result<Vec<(usize, String, usize, usize)>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != "node_id\trouted_student\tc_star\tpredicted_class\ttrue_class" {
        return Err(Error::contract(format!(
            "unexpected predictions header {header:?}"
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 5 {
            return Err(Error::contract(format!(
                "predictions line {}: expected 5 columns, got {}",
                i + 2,
                parts.len()
            )));
        }
        let parse = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| {
                Error::contract(format!("predictions line {}: bad {what} {s:?}", i + 2))
            })
        };
        rows.push((
            parse(parts[0], "node id")?,
            parts[1].to_string(),
            parse(parts[3], "predicted class")?,
            parse(parts[4], "true class")?,
        ));
    }
    Ok(rows)
}

/// Everything scored for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub method: String,
    pub report: MetricsReport,
    pub subsets: Vec<SubsetReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routing_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn seed_report_csv(report: &SeedReport) -> String {
    let mut out = report_csv(&report.report);
    if let Some(r) = report.routing_accuracy {
        out.push_str(&format!("routing_accuracy,{r}\n"));
    }
    for s in &report.subsets {
        out.push_str(&format!("subset_{}_count,{}\n", s.subset.name(), s.count));
        out.push_str(&format!(
            "subset_{}_accuracy,{}\n",
            s.subset.name(),
            s.accuracy
        ));
        out.push_str(&format!(
            "subset_{}_balanced_accuracy,{}\n",
            s.subset.name(),
            s.balanced_accuracy
        ));
    }
    out
}

/// Scores one seed's predictions and writes `metrics.json`/`metrics.csv`.
pub fn eval_seed(
    g: &Graph,
    cfg: &ExperimentConfig,
    seed: u64,
    partition: &SubsetPartition,
    preds: &SeedPredictions,
) -> Result<SeedReport> {
    let run = || -> Result<SeedReport> {
        let cm = ConfusionMatrix::from_labels(&preds.truth, &preds.predicted, g.num_classes())?;
        let report = compute_report(&cm)?;
        let subsets = subset_breakdown(g, partition, &preds.nodes, &preds.predicted)?;
        if let Some(r) = preds.routing_accuracy {
            let m = &report.metrics;
            if m.accuracy > r + 1e-12 {
                return Err(Error::contract(format!(
                    "accuracy {} exceeds routing accuracy {r}",
                    m.accuracy
                )));
            }
        }
        Ok(SeedReport {
            seed,
            method: cfg.method.name().to_string(),
            report,
            subsets,
            routing_accuracy: preds.routing_accuracy,
            warnings: preds.warnings.clone(),
        })
    };
    let report = tag(run(), seed, "eval")?;
    let dir = seed_dir(&cfg.out, seed);
    tag(
        write_text(
            &dir.join("metrics.json"),
            &format!("{}\n", serde_json::to_string_pretty(&report)?),
        ),
        seed,
        "eval",
    )?;
    tag(
        write_text(&dir.join("metrics.csv"), &seed_report_csv(&report)),
        seed,
        "eval",
    )?;
    Ok(report)
}

/// Runs prepare, train, infer, and eval for one seed, in memory.
pub fn run_seed(g: &Graph, cfg: &ExperimentConfig, seed: u64) -> Result<SeedReport> {
    let (manifest, partition) = prepare_seed(g, cfg, seed)?;
    let (checkpoint, table) = train_seed(g, cfg, seed, &manifest, &partition)?;
    let preds = infer_seed(g, cfg, seed, &manifest, &partition, &checkpoint, table.as_ref())?;
    eval_seed(g, cfg, seed, &partition, &preds)
}

/// Mean and sample standard deviation of one metric across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub mean: f64,
    pub std: f64,
}

fn aggregate(values: &[f64]) -> MetricAggregate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MetricAggregate { mean, std }
}

/// One seed's headline numbers inside the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummaryRow {
    pub seed: u64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
    pub geometric_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routing_accuracy: Option<f64>,
}

/// Cross-seed aggregate of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub method: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedSummaryRow>,
    /// Keyed by metric name, alphabetical.
    pub aggregate: BTreeMap<String, MetricAggregate>,
}

/// Collapses per-seed reports into the summary.
pub fn summarize(cfg: &ExperimentConfig, reports: &[SeedReport]) -> Result<ExperimentSummary> {
    if reports.is_empty() {
        return Err(Error::contract("no seed reports to summarize"));
    }
    let per_seed: Vec<SeedSummaryRow> = reports
        .iter()
        .map(|r| SeedSummaryRow {
            seed: r.seed,
            accuracy: r.report.metrics.accuracy,
            balanced_accuracy: r.report.metrics.balanced_accuracy,
            macro_f1: r.report.metrics.macro_f1,
            geometric_mean: r.report.metrics.geometric_mean,
            routing_accuracy: r.routing_accuracy,
        })
        .collect();
    let mut agg = BTreeMap::new();
    let column = |f: fn(&SeedSummaryRow) -> f64| -> Vec<f64> { per_seed.iter().map(f).collect() };
    agg.insert("accuracy".to_string(), aggregate(&column(|r| r.accuracy)));
    agg.insert(
        "balanced_accuracy".to_string(),
        aggregate(&column(|r| r.balanced_accuracy)),
    );
    agg.insert("macro_f1".to_string(), aggregate(&column(|r| r.macro_f1)));
    agg.insert(
        "geometric_mean".to_string(),
        aggregate(&column(|r| r.geometric_mean)),
    );
    Ok(ExperimentSummary {
        method: cfg.method.name().to_string(),
        seeds: reports.iter().map(|r| r.seed).collect(),
        per_seed,
        aggregate: agg,
    })
}

fn summary_csv(summary: &ExperimentSummary) -> String {
    let mut out = String::from("seed,accuracy,balanced_accuracy,macro_f1,geometric_mean\n");
    for r in &summary.per_seed {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.seed, r.accuracy, r.balanced_accuracy, r.macro_f1, r.geometric_mean
        ));
    }
    let row = |label: &str, f: fn(&MetricAggregate) -> f64, out: &mut String| {
        out.push_str(&format!(
            "{label},{},{},{},{}\n",
            f(&summary.aggregate["accuracy"]),
            f(&summary.aggregate["balanced_accuracy"]),
            f(&summary.aggregate["macro_f1"]),
            f(&summary.aggregate["geometric_mean"]),
        ));
    };
    row("mean", |a| a.mean, &mut out);
    row("std", |a| a.std, &mut out);
    out
}

/// Writes `summary.json` and `summary.csv` into the output directory.
pub fn write_summary(cfg: &ExperimentConfig, summary: &ExperimentSummary) -> Result<()> {
    write_text(
        &cfg.out.join("summary.json"),
        &format!("{}\n", serde_json::to_string_pretty(summary)?),
    )?;
    write_text(&cfg.out.join("summary.csv"), &summary_csv(summary))
}

/// Writes the effective configuration snapshot into the output
/// directory.
pub fn write_config_snapshot(cfg: &ExperimentConfig) -> Result<()> {
    write_text(
        &cfg.out.join("config.json"),
        &format!("{}\n", cfg.to_json_pretty()?),
    )
}

/// Runs the full experiment: every seed end to end, then the summary.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let (g, _report) = load_dataset(&cfg.dataset)?;
    write_config_snapshot(cfg)?;
    let mut reports = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        reports.push(run_seed(&g, cfg, seed)?);
    }
    let summary = summarize(cfg, &reports)?;
    write_summary(cfg, &summary)?;
    Ok(summary)
}

/// Re-aggregates previously written per-seed metrics into the summary.
pub fn report_from_artifacts(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    let mut reports = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let text = read_artifact(&seed_dir(&cfg.out, seed).join("metrics.json"))?;
        reports.push(serde_json::from_str::<SeedReport>(&text)?);
    }
    let summary = summarize(cfg, &reports)?;
    write_summary(cfg, &summary)?;
    Ok(summary)
}

/// Loads the artifacts a later pipeline stage needs from disk.
pub fn load_prepared(cfg: &ExperimentConfig, seed: u64) -> Result<(SplitManifest, SubsetPartition)> {
    let dir = seed_dir(&cfg.out, seed);
    let manifest = SplitManifest::from_json(&read_artifact(&dir.join("manifest.json"))?)?;
    let partition = SubsetPartition::from_json(&read_artifact(&dir.join("partition.json"))?)?;
    Ok((manifest, partition))
}

/// Loads the checkpoint (and cached prototypes when present) from disk.
pub fn load_trained(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Checkpoint, Option<PrototypeTable>)> {
    let dir = seed_dir(&cfg.out, seed);
    let checkpoint = Checkpoint::from_json(&read_artifact(&dir.join("bundle.json"))?)?;
    let proto_path = dir.join("prototypes.json");
    let table = if proto_path.exists() {
        Some(serde_json::from_str(&read_artifact(&proto_path)?)?)
    } else {
        None
    };
    Ok((checkpoint, table))
}

/// Loads previously written predictions for re-evaluation.
pub fn load_predictions(cfg: &ExperimentConfig, seed: u64) -> Result<SeedPredictions> {
    let tsv = read_artifact(&seed_dir(&cfg.out, seed).join("predictions.tsv"))?;
    let rows = parse_predictions_tsv(&tsv)?;
    let mut nodes = Vec::with_capacity(rows.len());
    let mut predicted = Vec::with_capacity(rows.len());
    let mut truth = Vec::with_capacity(rows.len());
    let mut routed_right = 0usize;
    let mut routable = true;
    // The partition is only needed when routing columns are present.
    let partition = SubsetPartition::from_json(&read_artifact(
        &seed_dir(&cfg.out, seed).join("partition.json"),
    )?)?;
    for (node, routed, pred, t) in &rows {
        nodes.push(*node);
        predicted.push(*pred);
        truth.push(*t);
        match routed.as_str() {
            "head" | "tail" => {
                let truth_head = partition.is_head_class(*t);
                if (routed == "head") == truth_head {
                    routed_right += 1;
                }
            }
            _ => routable = false,
        }
    }
    let routing_accuracy = if routable && !rows.is_empty() {
        Some(routed_right as f64 / rows.len() as f64)
    } else {
        None
    };
    Ok(SeedPredictions {
        tsv,
        nodes,
        predicted,
        truth,
        routing_accuracy,
        warnings: Vec::new(),
    })
}
