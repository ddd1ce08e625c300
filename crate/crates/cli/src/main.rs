//! `seed`: coreset selection from checkpoint gradient features.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seed_core::pipeline::{build_graph, run_select_labeled};
use seed_core::synthbench::write_instance;
use seed_core::{
    emit_report, generate, load_bundle, oracle_check, run_vote, Budget, Bundle, Result, SeedConfig,
    SeedError, SynthSpec, TargetSelector,
};

#[derive(Parser)]
#[command(name = "seed", version, about = "Influence-weighted independent-set coreset selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select a coreset for one named target set.
    Select {
        #[command(flatten)]
        run: RunArgs,
        /// Target set name from the manifest.
        #[arg(long)]
        target: String,
        /// Also write the conflict graph as edges.txt.
        #[arg(long)]
        edges: bool,
    },
    /// Select per target set and keep the rows with the most votes.
    Vote {
        #[command(flatten)]
        run: RunArgs,
        /// Share of the pool kept after voting, in (0, 1].
        #[arg(long)]
        retain_frac: f64,
    },
    /// Build the conflict graph only and write its statistics and edges.
    GraphStats {
        #[command(flatten)]
        run: RunArgs,
        /// Target used for the edge mask when --mask-edges is set.
        #[arg(long)]
        target: Option<String>,
    },
    /// Compare the greedy solver with the exact solver on random graphs.
    OracleCheck {
        /// Largest node count per instance (at most 30).
        #[arg(long, default_value_t = 18)]
        nodes: usize,
        /// Instances per edge probability.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.6")]
        edge_probs: Vec<f64>,
    },
    /// Generate a synthetic instance with planted quality.
    Synth {
        /// JSON spec; omitted fields take the standard values.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Overrides the seed in the --spec file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Manifest JSON listing checkpoints and matrix paths.
    #[arg(long)]
    manifest: PathBuf,
    /// Absolute selection budget.
    #[arg(long, conflicts_with = "budget_frac")]
    budget: Option<usize>,
    /// Selection budget as a share of the pool, in (0, 1].
    #[arg(long)]
    budget_frac: Option<f64>,
    /// Neighbors per node in the candidate search.
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Local density scale, strictly between 0 and 1.
    #[arg(long, default_value_t = 0.7)]
    alpha: f64,
    /// Global cosine threshold for conflict edges. No published default
    /// exists; 0.5 is this tool's choice.
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Use every channel for node weights.
    #[arg(long)]
    no_subspace: bool,
    /// Use the global threshold for every pair.
    #[arg(long)]
    no_local_scale: bool,
    /// Take the heaviest rows without the conflict graph.
    #[arg(long)]
    no_wis: bool,
    /// Keep selecting rows with negative weight while budget remains.
    #[arg(long)]
    allow_negative: bool,
    /// Build edge embeddings from the mutual-subspace channels.
    #[arg(long)]
    mask_edges: bool,
    #[arg(long, default_value_t = 1024)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// One integer domain label per training row, for per-domain degrees.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn config(&self, target: TargetSelector) -> SeedConfig {
        let budget = match (self.budget, self.budget_frac) {
            (Some(k), _) => Budget::Count(k),
            (None, Some(f)) => Budget::Fraction(f),
            (None, None) => SeedConfig::default().budget,
        };
        SeedConfig {
            k: self.k,
            alpha: self.alpha,
            tau: self.tau,
            budget,
            target,
            enable_subspace: !self.no_subspace,
            enable_local_scaling: !self.no_local_scale,
            enable_wis: !self.no_wis,
            allow_negative: self.allow_negative,
            mask_edges: self.mask_edges,
            seed: self.seed,
            batch_size: self.batch_size,
        }
    }

    fn require_budget(&self) -> Result<()> {
        if self.budget.is_none() && self.budget_frac.is_none() {
            return Err(SeedError::validation("one of --budget or --budget-frac is required"));
        }
        Ok(())
    }

    fn labels(&self) -> Result<Option<Vec<usize>>> {
        let Some(path) = &self.labels else {
            return Ok(None);
        };
        let text = fs::read_to_string(path)
            .map_err(|e| SeedError::io(format!("read {}", path.display()), e))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim().parse().map_err(|_| {
                    SeedError::Format(format!("{} line {}: bad label {l:?}", path.display(), i + 1))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn bundle(&self) -> Result<Bundle> {
        load_bundle(&self.manifest)
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| SeedError::io(format!("encode {}", path.display()), e.into()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| SeedError::io(format!("write {}", path.display()), e))
}

fn write_ids(path: &Path, ids: &[usize]) -> Result<()> {
    let text: String = ids.iter().map(|i| format!("{i}\n")).collect();
    fs::write(path, text).map_err(|e| SeedError::io(format!("write {}", path.display()), e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SeedError::io(format!("create {}", dir.display()), e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Select { run, target, edges } => {
            run.require_budget()?;
            let labels = run.labels()?;
            let bundle = run.bundle()?;
            let config = run.config(TargetSelector::Named(target));
            let result = run_select_labeled(&bundle, &config, labels.as_deref())?;
            emit_report(&result.report, &run.out, edges.then_some(&result.graph))?;
            let s = &result.report.selection;
            eprintln!(
                "selected {} of {} rows (budget {}), total weight {:e}",
                s.selected.len(),
                bundle.train_count(),
                s.budget,
                s.total_weight
            );
        }
        Command::Vote { run, retain_frac } => {
            run.require_budget()?;
            let bundle = run.bundle()?;
            let tally = run_vote(&bundle, &run.config(TargetSelector::All), retain_frac)?;
            create_dir(&run.out)?;
            write_ids(&run.out.join("selected.txt"), &tally.retained)?;
            write_json(&run.out.join("votes.json"), &tally)?;
            eprintln!(
                "kept {} of {} rows from {} target sets",
                tally.retained.len(),
                bundle.train_count(),
                tally.per_target_selected.len()
            );
        }
        Command::GraphStats { run, target } => {
            let labels = run.labels()?;
            let bundle = run.bundle()?;
            let selector = target.map_or(TargetSelector::All, TargetSelector::Named);
            let built = build_graph(&bundle, &run.config(selector), labels.as_deref())?;
            create_dir(&run.out)?;
            write_json(&run.out.join("graph_stats.json"), &built.stats)?;
            let path = run.out.join("edges.txt");
            let file = fs::File::create(&path)
                .map_err(|e| SeedError::io(format!("create {}", path.display()), e))?;
            built
                .graph
                .write_edge_list(std::io::BufWriter::new(file))
                .map_err(|e| SeedError::io(format!("write {}", path.display()), e))?;
            eprintln!(
                "{} nodes, {} edges, max degree {}",
                built.stats.node_count, built.stats.edge_count, built.stats.max_degree
            );
        }
        Command::OracleCheck {
            nodes,
            trials,
            seed,
            edge_probs,
        } => {
            let rows = oracle_check(nodes, trials, &edge_probs, seed)?;
            println!("edge_prob  trials  invalid  bound_violations  mean_ratio  min_ratio");
            for r in &rows {
                println!(
                    "{:>9.2}  {:>6}  {:>7}  {:>16}  {:>10.4}  {:>9.4}",
                    r.edge_prob, r.trials, r.invalid, r.bound_violations, r.mean_ratio, r.min_ratio
                );
            }
            if rows.iter().any(|r| r.invalid > 0 || r.bound_violations > 0) {
                return Err(SeedError::Invariant("greedy failed validity or the (max degree + 1) bound".into()));
            }
        }
        Command::Synth { spec, seed, out } => {
            let mut spec: SynthSpec = match spec {
                Some(path) => {
                    let text = fs::read_to_string(&path)
                        .map_err(|e| SeedError::io(format!("read {}", path.display()), e))?;
                    serde_json::from_str(&text)
                        .map_err(|e| SeedError::Format(format!("{}: {e}", path.display())))?
                }
                None => SynthSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let (bundle, truth) = generate(&spec)?;
            let manifest = write_instance(&bundle, &truth, &out)?;
            eprintln!(
                "wrote {} rows x {} channels, {} checkpoints: {}",
                bundle.train_count(),
                bundle.channel_count(),
                bundle.checkpoints().len(),
                manifest.display()
            );
        }
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("SEED_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t >= 1)
        .ok_or_else(|| SeedError::validation(format!("SEED_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| SeedError::Invariant(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
