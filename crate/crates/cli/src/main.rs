use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use halt_cli::commands::{self, ABLATION_VARIANTS};
use halt_cli::config::{load_config_file, RunConfig};

#[derive(Parser)]
#[command(
    name = "halt-rag",
    version,
    about = "Calibrated hallucination detection over NLI and lexical features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score a dataset with both NLI backends and write its feature matrix.
    Extract(Common),
    /// Out-of-fold training, calibration and thresholding on a feature matrix.
    Evaluate(Common),
    /// Re-run evaluation with feature groups removed.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated variants to run.
        #[arg(long, value_delimiter = ',', default_values_t = ABLATION_VARIANTS.iter().map(|s| s.to_string()))]
        variants: Vec<String>,
    },
    /// Generate a planted synthetic corpus with two score files.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of examples.
        #[arg(long)]
        n: Option<u64>,
    },
}

#[derive(Args)]
struct Common {
    /// key=value file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// summarization, qa, dialogue or synthetic.
    #[arg(long)]
    task: Option<String>,
    /// logreg or linear_svc; defaults per task.
    #[arg(long)]
    classifier: Option<String>,
    /// platt or isotonic; defaults per task.
    #[arg(long)]
    calibration: Option<String>,
    /// Number of folds (default 5).
    #[arg(long)]
    k: Option<u64>,
    /// Master seed; split, optimizer and synthetic seeds derive from it (default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Minimum precision the threshold must reach (default 0.70).
    #[arg(long)]
    precision_floor: Option<f64>,
    /// Coverage target for selective prediction (default 0.90).
    #[arg(long)]
    coverage: Option<f64>,
    /// none, drop_contradiction, drop_entailment, drop_lexical, single_a, single_b (comma-separated).
    #[arg(long)]
    mask: Option<String>,
    /// Score file for backend A, or `synthetic`.
    #[arg(long)]
    scores_a: Option<String>,
    /// Score file for backend B, or `synthetic`.
    #[arg(long)]
    scores_b: Option<String>,
    /// Input dataset (extract) or feature matrix (evaluate, ablate).
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Output file (extract) or directory (synth, evaluate, ablate).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stratify folds by label.
    #[arg(long)]
    stratified: bool,
}

impl Common {
    fn resolve(&self, extra: &[(&str, Option<String>)]) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => load_config_file(path)?,
            None => BTreeMap::new(),
        };
        let mut flags = BTreeMap::new();
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                flags.insert(k.to_string(), v);
            }
        };
        set("task", self.task.clone());
        set("classifier", self.classifier.clone());
        set("calibration", self.calibration.clone());
        set("k", self.k.map(|v| v.to_string()));
        set("seed", self.seed.map(|v| v.to_string()));
        set(
            "precision_floor",
            self.precision_floor.map(|v| v.to_string()),
        );
        set("coverage", self.coverage.map(|v| v.to_string()));
        set("mask", self.mask.clone());
        set("scores_a", self.scores_a.clone());
        set("scores_b", self.scores_b.clone());
        set("in", self.input.as_ref().map(|p| p.display().to_string()));
        set("out", self.out.as_ref().map(|p| p.display().to_string()));
        set("stratified", self.stratified.then(|| "true".to_string()));
        for (k, v) in extra {
            set(k, v.clone());
        }
        RunConfig::resolve(&file, &flags)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, n } => {
            let cfg = common.resolve(&[("n", n.map(|v| v.to_string()))])?;
            let out = commands::synth(&cfg)?;
            println!(
                "wrote {} examples to {} (scores: {}, {})",
                cfg.n,
                out.examples.display(),
                out.scores_a.display(),
                out.scores_b.display()
            );
        }
        Command::Extract(common) => {
            let cfg = common.resolve(&[])?;
            let features = commands::extract(&cfg)?;
            println!(
                "wrote {} x {} features to {}",
                features.len(),
                features.dim(),
                cfg.output()?.display()
            );
        }
        Command::Evaluate(common) => {
            let cfg = common.resolve(&[])?;
            let eval = commands::evaluate_file(&cfg)?;
            let r = &eval.report;
            println!(
                "{} {}+{}: precision {:.4} recall {:.4} f1 {:.4} at threshold {:.6} (roc_auc {:.4}, ece {:.4})",
                cfg.task, cfg.classifier, cfg.calibration, r.precision, r.recall, r.f1,
                r.policy.threshold, r.roc_auc, r.ece
            );
            if let Some(s) = &r.selective {
                println!(
                    "coverage {:.2}: precision {:.4} recall {:.4} f1 {:.4} ({} abstained)",
                    s.realized_coverage, s.precision, s.recall, s.f1, s.abstained
                );
            }
        }
        Command::Ablate { common, variants } => {
            let cfg = common.resolve(&[])?;
            let rows = commands::ablate(&cfg, &variants)?;
            println!(
                "{:<18} {:>4} {:>9} {:>9} {:>9}",
                "variant", "dim", "precision", "recall", "f1"
            );
            for row in &rows {
                println!(
                    "{:<18} {:>4} {:>9.4} {:>9.4} {:>9.4}",
                    row.variant, row.dim, row.report.precision, row.report.recall, row.report.f1
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
