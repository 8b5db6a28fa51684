//! Command-line front end for the long-tail expert pipeline.
//!
//! The pipeline stages are separate subcommands (`prepare`, `train`,
//! `infer`, `eval`) sharing one artifact directory, `run` chains them for
//! every seed, `report` re-aggregates written metrics, and `convert`
//! turns a citation-network file pair into the dataset layout.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lte4g::config::{
    parse_alpha, parse_method, parse_protocol, parse_scheduler, ExperimentConfig, Method,
    ProtocolKind,
};
use lte4g::error::Result;
use lte4g::experiment::{
    eval_seed, infer_seed, load_predictions, load_prepared, load_trained, prepare_seed,
    report_from_artifacts, run_seed, summarize, train_seed, write_config_snapshot, write_summary,
    ExperimentSummary, SeedReport,
};
use lte4g::graph::io::{load_citation_pair, load_dataset, save_dataset};
use lte4g::graph::{sbm_generate, Graph};
use lte4g::model::AlphaMode;
use lte4g::training::SchedulerKind;

#[derive(Parser)]
#[command(
    name = "lte4g",
    version,
    about = "Long-tail experts for graph node classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and write the split manifest and subset partition per seed.
    Prepare(ConfigArgs),
    /// Train the configured method per seed (expects prepared artifacts).
    Train(ConfigArgs),
    /// Predict over the test nodes per seed (expects trained artifacts).
    Infer(ConfigArgs),
    /// Score written predictions per seed and aggregate the summary.
    Eval(ConfigArgs),
    /// Run every stage for every seed, then aggregate.
    Run(ConfigArgs),
    /// Re-aggregate previously written per-seed metrics.
    Report(ConfigArgs),
    /// Convert a citation-network file pair into a dataset directory.
    Convert {
        /// Content file: `id<TAB>feature...<TAB>class_name` per node.
        #[arg(long)]
        content: PathBuf,
        /// Citation file: `cited<TAB>citing` per line.
        #[arg(long)]
        cites: PathBuf,
        /// Dataset directory to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic block-model dataset directory.
    Generate {
        /// Comma-separated class sizes, e.g. `120,120,120`.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Edge probability inside a class.
        #[arg(long, default_value_t = 0.15)]
        p_in: f64,
        /// Edge probability across classes.
        #[arg(long, default_value_t = 0.01)]
        p_out: f64,
        /// Class-mean shift of the Gaussian features.
        #[arg(long, default_value_t = 2.5)]
        feature_shift: f64,
        /// Generator seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dataset directory to write.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Configuration file plus flag overrides, shared by every pipeline
/// subcommand. Flags win over file values; omitted settings keep their
/// defaults.
#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file to start from.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Split protocol: manual, lt, or natural.
    #[arg(long, value_parser = parse_protocol)]
    protocol: Option<ProtocolKind>,
    /// Minority-to-majority training ratio (manual) or tail decay
    /// target (long-tail).
    #[arg(long)]
    imb_ratio: Option<f64>,
    /// Number of minority classes under the manual protocol.
    #[arg(long)]
    imb_classes: Option<usize>,
    /// Per-class training quota for majority classes (manual protocol).
    #[arg(long)]
    train_quota: Option<usize>,
    /// Per-class validation quota.
    #[arg(long)]
    val_quota: Option<usize>,
    /// Per-class test quota.
    #[arg(long)]
    test_quota: Option<usize>,
    /// Training method: lte4g, origin, reweight, or oversample.
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Fraction of classes treated as head classes when partitioning.
    #[arg(long)]
    head_fraction: Option<f64>,
    /// Degree at or below which a node counts as low-degree.
    #[arg(long)]
    degree_threshold: Option<usize>,
    /// Focusing strength of the pretraining loss.
    #[arg(long)]
    gamma: Option<f64>,
    /// Class weighting of the pretraining loss: invfreq or uniform:F.
    #[arg(long, value_parser = parse_alpha)]
    alpha: Option<AlphaMode>,
    /// Distillation curriculum: convex, linear, or cos-half.
    #[arg(long, value_parser = parse_scheduler)]
    scheduler: Option<SchedulerKind>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Hidden embedding width.
    #[arg(long)]
    hidden: Option<usize>,
    /// Epoch cap per stage.
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Epochs without validation improvement before a stage stops.
    #[arg(long)]
    patience: Option<usize>,
    /// Comma-separated run seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the student stage; route test nodes straight to experts.
    #[arg(long)]
    no_distill: bool,
    /// Ablation: split training nodes into subsets uniformly at random.
    #[arg(long)]
    random_split: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.dataset {
            cfg.dataset = v.clone();
        }
        if let Some(v) = self.protocol {
            cfg.protocol.kind = v;
        }
        if let Some(v) = self.imb_ratio {
            cfg.protocol.imb_ratio = v;
        }
        if let Some(v) = self.imb_classes {
            cfg.protocol.imb_classes = v;
        }
        if let Some(v) = self.train_quota {
            cfg.protocol.train_quota = v;
        }
        if let Some(v) = self.val_quota {
            cfg.protocol.val_quota = v;
        }
        if let Some(v) = self.test_quota {
            cfg.protocol.test_quota = v;
        }
        if let Some(v) = self.method {
            cfg.method = v;
        }
        if let Some(v) = self.head_fraction {
            cfg.train.head_fraction = v;
        }
        if let Some(v) = self.degree_threshold {
            cfg.train.degree_threshold = v;
        }
        if let Some(v) = self.gamma {
            cfg.train.focal.gamma = v;
        }
        if let Some(v) = self.alpha {
            cfg.train.focal.alpha = v;
        }
        if let Some(v) = self.scheduler {
            cfg.train.scheduler = v;
        }
        if let Some(v) = self.lr {
            cfg.train.lr = v;
        }
        if let Some(v) = self.hidden {
            cfg.train.hidden = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.train.max_epochs = v;
        }
        if let Some(v) = self.patience {
            cfg.train.patience = v;
        }
        if let Some(v) = &self.seeds {
            cfg.seeds = v.clone();
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if self.no_distill {
            cfg.distill = false;
        }
        if self.random_split {
            cfg.random_split = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_graph_for(cfg: &ExperimentConfig) -> Result<Graph> {
    let (g, report) = load_dataset(&cfg.dataset)?;
    println!(
        "dataset: {} nodes, {} features, {} classes, {} undirected edges",
        g.n(),
        g.num_features(),
        g.num_classes(),
        report.undirected_edges
    );
    Ok(g)
}

fn print_seed_report(r: &SeedReport) {
    let m = &r.report.metrics;
    let routing = match r.routing_accuracy {
        Some(x) => format!(", routing {x:.4}"),
        None => String::new(),
    };
    println!(
        "seed {}: acc {:.4}, bacc {:.4}, macro-f1 {:.4}, g-means {:.4}{routing}",
        r.seed, m.accuracy, m.balanced_accuracy, m.macro_f1, m.geometric_mean
    );
    for w in &r.warnings {
        eprintln!("  warning: {w}");
    }
}

fn print_summary(s: &ExperimentSummary) {
    println!("method {} over {} seeds:", s.method, s.seeds.len());
    for (name, agg) in &s.aggregate {
        println!("  {name}: {:.4} ± {:.4}", agg.mean, agg.std);
    }
}

fn cmd_prepare(args: &ConfigArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let g = load_graph_for(&cfg)?;
    write_config_snapshot(&cfg)?;
    for &seed in &cfg.seeds {
        let (manifest, partition) = prepare_seed(&g, &cfg, seed)?;
        println!(
            "seed {seed}: prepared {} train / {} val / {} test nodes ({} subset warnings)",
            manifest.train.len(),
            manifest.val.len(),
            manifest.test.len(),
            partition.warnings.len()
        );
    }
    Ok(())
}

fn cmd_train(args: &ConfigArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let g = load_graph_for(&cfg)?;
    for &seed in &cfg.seeds {
        let (manifest, partition) = load_prepared(&cfg, seed)?;
        let (checkpoint, _) = train_seed(&g, &cfg, seed, &manifest, &partition)?;
        println!(
            "seed {seed}: trained {} ({} logged epochs)",
            cfg.method.name(),
            checkpoint.events().len()
        );
    }
    Ok(())
}

fn cmd_infer(args: &ConfigArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let g = load_graph_for(&cfg)?;
    for &seed in &cfg.seeds {
        let (manifest, partition) = load_prepared(&cfg, seed)?;
        let (checkpoint, table) = load_trained(&cfg, seed)?;
        let preds = infer_seed(
            &g,
            &cfg,
            seed,
            &manifest,
            &partition,
            &checkpoint,
            table.as_ref(),
        )?;
        let routing = match preds.routing_accuracy {
            Some(x) => format!(" (routing accuracy {x:.4})"),
            None => String::new(),
        };
        println!("seed {seed}: {} predictions{routing}", preds.nodes.len());
    }
    Ok(())
}

fn cmd_eval(args: &ConfigArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let g = load_graph_for(&cfg)?;
    let mut reports = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let (_, partition) = load_prepared(&cfg, seed)?;
        let preds = load_predictions(&cfg, seed)?;
        let report = eval_seed(&g, &cfg, seed, &partition, &preds)?;
        print_seed_report(&report);
        reports.push(report);
    }
    let summary = summarize(&cfg, &reports)?;
    write_summary(&cfg, &summary)?;
    print_summary(&summary);
    Ok(())
}

fn cmd_run(args: &ConfigArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let g = load_graph_for(&cfg)?;
    write_config_snapshot(&cfg)?;
    let mut reports = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let report = run_seed(&g, &cfg, seed)?;
        print_seed_report(&report);
        reports.push(report);
    }
    let summary = summarize(&cfg, &reports)?;
    write_summary(&cfg, &summary)?;
    print_summary(&summary);
    Ok(())
}

fn cmd_report(args: &ConfigArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let summary = report_from_artifacts(&cfg)?;
    for row in &summary.per_seed {
        let routing = match row.routing_accuracy {
            Some(x) => format!(", routing {x:.4}"),
            None => String::new(),
        };
        println!(
            "seed {}: acc {:.4}, bacc {:.4}, macro-f1 {:.4}, g-means {:.4}{routing}",
            row.seed, row.accuracy, row.balanced_accuracy, row.macro_f1, row.geometric_mean
        );
    }
    print_summary(&summary);
    Ok(())
}

fn cmd_convert(content: &PathBuf, cites: &PathBuf, out: &PathBuf) -> Result<()> {
    let (g, report) = load_citation_pair(content, cites)?;
    save_dataset(&g, out)?;
    println!(
        "converted {} nodes, {} features, {} classes ({}), {} undirected edges",
        report.nodes,
        report.num_features,
        report.classes.len(),
        report.classes.join(", "),
        report.undirected_edges
    );
    if report.dangling_edges > 0 {
        println!(
            "dropped {} of {} edge lines referencing papers without content rows",
            report.dangling_edges, report.edge_lines
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_generate(
    sizes: &[usize],
    p_in: f64,
    p_out: f64,
    feature_shift: f64,
    seed: u64,
    out: &PathBuf,
) -> Result<()> {
    let g = sbm_generate(seed, sizes, p_in, p_out, feature_shift)?;
    save_dataset(&g, out)?;
    println!(
        "generated {} nodes in {} classes with {} undirected edges",
        g.n(),
        g.num_classes(),
        g.num_edges()
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Prepare(args) => cmd_prepare(args),
        Command::Train(args) => cmd_train(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Run(args) => cmd_run(args),
        Command::Report(args) => cmd_report(args),
        Command::Convert { content, cites, out } => cmd_convert(content, cites, out),
        Command::Generate {
            sizes,
            p_in,
            p_out,
            feature_shift,
            seed,
            out,
        } => cmd_generate(sizes, *p_in, *p_out, *feature_shift, *seed, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
