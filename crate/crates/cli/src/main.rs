use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use graphcl::bench::{
    compare_strategies, generate_synthetic, gradient_audit, read_run_records, run_experiment, ExperimentConfig,
    SyntheticSpec, AUDIT_TERMS,
};
use graphcl::continual::Strategy;
use graphcl::graph::{io, Scenario};

#[derive(Parser)]
#[command(name = "graphcl", version, about = "Continual graph learning benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset in graphcl-v1 format.
    Gen(GenArgs),
    /// Run strategies over seeds and write per-run results and a summary.
    Run(RunArgs),
    /// Rank strategies from one or more result directories.
    Compare(CompareArgs),
    /// Finite-difference audit of the model and every loss term.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "gugc")]
    kind: Scenario,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    units_per_class: Option<usize>,
    #[arg(long)]
    nodes_min: Option<usize>,
    #[arg(long)]
    nodes_max: Option<usize>,
    #[arg(long)]
    p_intra: Option<f64>,
    #[arg(long)]
    p_inter: Option<f64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    classes_per_task: Option<usize>,
    /// Comma-separated strategy ids.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<Strategy>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    buffer_capacity: Option<usize>,
    #[arg(long)]
    replay_k: Option<usize>,
    #[arg(long)]
    k_g: Option<usize>,
    /// Whether structure distillation also covers the current batch.
    #[arg(long)]
    distill_current: Option<bool>,
    #[arg(long)]
    k_n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    ewc_lambda: Option<f64>,
    #[arg(long)]
    distill_weight: Option<f64>,
    #[arg(long)]
    ego_hops: Option<usize>,
    #[arg(long)]
    ego_cap: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    /// Result directories written by `run`.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    /// Write the markdown table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Restrict to one term.
    #[arg(long)]
    term: Option<String>,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

macro_rules! override_fields {
    ($src:expr, $dst:expr, $($field:ident),+) => {
        $(if let Some(v) = $src.$field { $dst.$field = v; })+
    };
}

fn gen(args: GenArgs) -> Result<()> {
    let mut spec = SyntheticSpec::for_kind(args.kind);
    spec.seed = args.seed;
    override_fields!(
        args, spec, classes, units_per_class, nodes_min, nodes_max, p_intra, p_inter, feature_dim, separation, noise
    );
    let graphs = generate_synthetic(&spec)?;
    io::save_dataset(&args.out, &graphs).with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {} graphs to {}", graphs.len(), args.out.display());
    Ok(())
}

fn run(args: RunArgs) -> Result<bool> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if args.dataset.is_some() {
        cfg.dataset = args.dataset.clone();
    }
    if args.scenario.is_some() {
        cfg.scenario = args.scenario;
    }
    if !args.strategy.is_empty() {
        cfg.strategies = args.strategy.clone();
    }
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds.clone();
    }
    override_fields!(args, cfg, classes_per_task, output_dir);
    override_fields!(
        args,
        cfg.train,
        epochs,
        lr,
        batch_size,
        hidden,
        buffer_capacity,
        replay_k,
        distill_current,
        k_n,
        alpha,
        beta,
        gamma,
        temperature,
        ewc_lambda,
        distill_weight,
        ego_hops,
        ego_cap
    );
    if args.k_g.is_some() {
        cfg.train.k_g = args.k_g;
    }
    let report = run_experiment(&cfg)?;
    for r in &report.records {
        let af = r.af.map_or("n/a".to_string(), |v| format!("{:.1}", v * 100.0));
        println!("{} seed {}: AP {:.1} AF {af}", r.strategy, r.seed, r.ap * 100.0);
    }
    println!("results in {}", cfg.output_dir.display());
    let failed = report.failures();
    if failed > 0 {
        eprintln!("{failed} run(s) failed; see manifest.json");
    }
    Ok(failed == 0)
}

fn compare(args: CompareArgs) -> Result<()> {
    let sets = args
        .dirs
        .iter()
        .map(|d| read_run_records(d).with_context(|| format!("reading results in {}", d.display())))
        .collect::<Result<Vec<_>>>()?;
    let table = compare_strategies(&sets)?.to_markdown();
    match args.out {
        Some(p) => fs::write(&p, table).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{table}"),
    }
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<bool> {
    if let Some(t) = &args.term {
        if !AUDIT_TERMS.contains(&t.as_str()) {
            bail!("unknown term `{t}`; expected one of {}", AUDIT_TERMS.join(", "));
        }
    }
    let mut ok = true;
    for (term, seed, report) in gradient_audit(0..args.seeds) {
        if args.term.as_deref().is_some_and(|t| t != term) {
            continue;
        }
        let pass = report.max_rel_error < args.tolerance;
        ok &= pass;
        println!(
            "{:<8} seed {seed:>3}: max rel err {:.2e} over {} coords ({} near kinks) {}",
            term,
            report.max_rel_error,
            report.checked,
            report.skipped_kinks,
            if pass { "ok" } else { "FAIL" }
        );
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a).map(|_| true),
        Command::Run(a) => run(a),
        Command::Compare(a) => compare(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
