//! Command-line entry point wiring ingest, discovery, recommendation,
//! evaluation, and synthetic-data generation into reproducible runs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use rayon::prelude::*;

use nutrigraph::config::RunConfig;
use nutrigraph::error::{Error, Result};
use nutrigraph::eval::{comparison_table, run_experiment, EvalReport};
use nutrigraph::food::load_food_db;
use nutrigraph::graph::standard_variables;
use nutrigraph::ingest::{
    build_feature_table, parse_activity_csv, parse_cgm_csv, parse_feature_csv, parse_meals_csv,
    split_half, write_activity_csv, write_cgm_csv, write_feature_csv, write_meals_csv,
    UserDataset,
};
use nutrigraph::persist::{save_as, Kind};
use nutrigraph::recommend::{
    recommend, Ablation, RecommendationRequest, TemplateBackend, TypicalContext,
};
use nutrigraph::scm::{feature_rows, FittedOn, PersonalCausalGraph};
use nutrigraph::synth::{default_cohort, generate_user, GeneratorSpec};

#[derive(Parser)]
#[command(name = "nutrigraph", version, about = "Personal causal graphs for dietary guidance")]
struct Cli {
    /// JSON config file with RunConfig keys; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 forces serial execution.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Featurize every user directory into a feature CSV.
    Ingest(IngestArgs),
    /// Fit and save the train-half causal graph per user.
    Discover(DiscoverArgs),
    /// Answer one query for one user and print the recommendation JSON.
    Recommend(RecommendArgs),
    /// Run the counterfactual evaluation and write reports and the
    /// comparison table.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic cohort with known ground truth.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiscoverArgs {
    /// Directory of per-user feature CSVs produced by `ingest`.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    user: String,
    #[arg(long)]
    query: String,
    #[arg(long, default_value_t = 120)]
    horizon: u32,
    #[arg(long)]
    food_db: Option<PathBuf>,
    /// Food names to exclude; repeatable.
    #[arg(long)]
    exclude: Vec<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    food_db: Option<PathBuf>,
    /// full | no_verification | no_ranking | no_graph | all
    #[arg(long, default_value = "all")]
    mode: String,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    users: usize,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

/// User directories are immediate subdirectories containing cgm.csv,
/// meals.csv, and activity.csv.
fn user_dirs(data_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(data_dir)?
        .filter_map(|entry| entry.ok())
        .map(|entry| entry.path())
        .filter(|p| p.is_dir() && p.join("cgm.csv").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Data(format!(
            "no user directories with cgm.csv under {}",
            data_dir.display()
        )));
    }
    Ok(dirs)
}

fn load_user(dir: &Path, config: &RunConfig) -> Result<UserDataset> {
    let user_id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("user")
        .to_string();
    let glucose = parse_cgm_csv(std::fs::File::open(dir.join("cgm.csv"))?)?;
    let meals = parse_meals_csv(std::fs::File::open(dir.join("meals.csv"))?)?;
    let activity = parse_activity_csv(std::fs::File::open(dir.join("activity.csv"))?)?;
    let features = build_feature_table(&glucose, &meals, &activity, config.baseline_mode)?;
    Ok(UserDataset {
        user_id,
        glucose,
        meals,
        activity,
        features,
    })
}

fn cmd_ingest(args: &IngestArgs, config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let dirs = user_dirs(&args.data_dir)?;
    let outcomes: Vec<(String, Result<()>)> = dirs
        .par_iter()
        .map(|dir| {
            let name = dir.file_name().unwrap().to_string_lossy().to_string();
            let run = || -> Result<()> {
                let user = load_user(dir, config)?;
                let csv = write_feature_csv(&user.features);
                std::fs::write(args.out.join(format!("{}.features.csv", user.user_id)), csv)?;
                Ok(())
            };
            (name, run())
        })
        .collect();
    let mut ok = 0;
    for (name, outcome) in &outcomes {
        match outcome {
            Ok(()) => ok += 1,
            Err(e) => error!("user {name}: {e}"),
        }
    }
    info!("featurized {ok}/{} users", outcomes.len());
    if ok == 0 {
        return Err(Error::Data("all users failed to featurize".into()));
    }
    Ok(())
}

fn cmd_discover(args: &DiscoverArgs, config: &RunConfig) -> Result<()> {
    let mut config = config.clone();
    if let Some(alpha) = args.alpha {
        config.alpha = alpha;
        config.validate()?;
    }
    std::fs::create_dir_all(&args.out)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(&args.features)?
        .filter_map(|entry| entry.ok())
        .map(|entry| entry.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.ends_with(".features.csv"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no .features.csv files under {}",
            args.features.display()
        )));
    }
    let outcomes: Vec<Result<()>> = files
        .par_iter()
        .map(|path| {
            let user_id = path
                .file_name()
                .unwrap()
                .to_string_lossy()
                .trim_end_matches(".features.csv")
                .to_string();
            let features = parse_feature_csv(std::fs::File::open(path)?)?;
            let (train, _) = split_half(&features)?;
            let graph = PersonalCausalGraph::fit(
                &user_id,
                &train,
                &standard_variables(),
                config.alpha,
                FittedOn::TrainHalf,
            )?;
            save_as(
                Kind::Graph,
                &graph,
                &args.out.join(format!("{user_id}.graph.json")),
            )
        })
        .collect();
    for outcome in outcomes {
        outcome?;
    }
    Ok(())
}

fn cmd_recommend(args: &RecommendArgs, config: &RunConfig) -> Result<()> {
    let dir = args.data_dir.join(&args.user);
    if !dir.is_dir() {
        return Err(Error::Data(format!("unknown user {:?}", args.user)));
    }
    let user = load_user(&dir, config)?;
    let (train, _) = split_half(&user.features)?;
    let graph = PersonalCausalGraph::fit(
        &user.user_id,
        &train,
        &standard_variables(),
        config.alpha,
        FittedOn::TrainHalf,
    )?;
    let train_rows = feature_rows(&train);
    let context = TypicalContext::from_rows(&graph, &train_rows);
    let db_path = args.food_db.as_ref().unwrap_or(&config.food_db);
    let db = load_food_db(&std::fs::read(db_path)?)?;
    let request = RecommendationRequest {
        user_id: user.user_id.clone(),
        query_text: args.query.clone(),
        horizon_min: args.horizon,
        exclude: args.exclude.iter().cloned().collect::<BTreeSet<_>>(),
        budget_kcal: config.budget_kcal,
    };
    let rec = recommend(
        &graph,
        &context,
        &db,
        &request,
        &TemplateBackend,
        config,
        Ablation::Full,
    )?;
    println!("{}", serde_json::to_string_pretty(&rec)?);
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs, config: &RunConfig) -> Result<()> {
    let modes: Vec<Ablation> = if args.mode == "all" {
        vec![
            Ablation::Full,
            Ablation::NoVerification,
            Ablation::NoRanking,
            Ablation::NoGraph,
        ]
    } else {
        vec![Ablation::parse(&args.mode)?]
    };
    std::fs::create_dir_all(&args.out)?;
    let db_path = args.food_db.as_ref().unwrap_or(&config.food_db);
    let db = load_food_db(&std::fs::read(db_path)?)?;
    let dirs = user_dirs(&args.data_dir)?;
    let users: Vec<UserDataset> = dirs
        .par_iter()
        .map(|dir| load_user(dir, config))
        .collect::<Result<Vec<_>>>()?;
    let mut reports: Vec<EvalReport> = Vec::new();
    for mode in modes {
        let report = run_experiment(&users, &db, &TemplateBackend, config, mode)?;
        save_as(
            Kind::Report,
            &report,
            &args.out.join(format!("report_{}.json", mode.tag())),
        )?;
        reports.push(report);
    }
    if reports.iter().any(|r| r.mode == Ablation::Full) {
        let table = comparison_table(&reports)?;
        std::fs::write(args.out.join("table.csv"), &table)?;
        print!("{table}");
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs, config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let cohort = default_cohort(args.users, config.seed)?;
    for (user, truth) in &cohort {
        let dir = args.out.join(&user.user_id);
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("cgm.csv"), write_cgm_csv(&user.glucose))?;
        std::fs::write(dir.join("meals.csv"), write_meals_csv(&user.meals))?;
        std::fs::write(dir.join("activity.csv"), write_activity_csv(&user.activity))?;
        save_as(Kind::Truth, truth, &dir.join("truth.json"))?;
    }
    info!("wrote {} users to {}", cohort.len(), args.out.display());
    // A quick self-check that the generator round-trips one user.
    if let Some((user, _)) = cohort.first() {
        let spec_probe = GeneratorSpec {
            user_id: user.user_id.clone(),
            truth: cohort[0].1.clone(),
            meal_distribution: nutrigraph::synth::default_meal_distribution(),
            days: 1,
            meals_per_day: 3,
            seed: config.seed,
        };
        let _ = generate_user(&GeneratorSpec {
            days: 3,
            ..spec_probe
        })?;
    }
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Usage(format!("cannot configure thread pool: {e}")))?;
    }
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Ingest(args) => cmd_ingest(args, &config),
        Command::Discover(args) => cmd_discover(args, &config),
        Command::Recommend(args) => cmd_recommend(args, &config),
        Command::Evaluate(args) => cmd_evaluate(args, &config),
        Command::Synth(args) => cmd_synth(args, &config),
    }
}

fn main() {
    env_logger::init();
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
