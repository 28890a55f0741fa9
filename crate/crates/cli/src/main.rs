//! `interest`: world generation, filter training, teacher RL, distillation,
//! evaluation and sweeps behind one binary.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors
//! (bad flags, missing input files, invalid configuration). Failures print
//! a single line `error: kind=<kind> msg=<message>` to stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use interest_core::config::DistillMode;
use interest_core::eval::{
    eval_verbatim, run_eval, sweep_bestofn, sweep_capacity, sweep_reward_ablation, write_sweep_csv,
};
use interest_core::filter::train_filter;
use interest_core::grpo::train_teacher;
use interest_core::services::index_params;
use interest_core::warmup::base_policy;
use interest_core::{
    distill, generate_world, grpo, Config, Error, FilterModel, Index, Lambdas, PolicyParams, Services,
    Tier, World,
};

#[derive(Debug, Parser)]
#[command(name = "interest", version, about = "Query-list interest modeling pipeline")]
struct Cli {
    /// Seed for every stage; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config file; keys not given keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic world into a directory.
    GenWorld {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the behavior filter on a world and save it.
    TrainFilter {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Warm-start and GRPO-train a teacher policy.
    TrainTeacher {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tier: Option<Tier>,
        /// Per-step training log CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Distill a teacher checkpoint into a student.
    Distill {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        mode: Option<DistillMode>,
        /// Required unless `--mode none`.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (or the verbatim baseline) on held-out clicks.
    Evaluate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, required_unless_present = "verbatim")]
        ckpt: Option<PathBuf>,
        /// Issue cleaned search payloads as queries instead of a policy.
        #[arg(long, conflicts_with = "ckpt")]
        verbatim: bool,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate a family of configurations; writes CSV and SVG.
    Sweep {
        kind: SweepKind,
        /// World directory; generated from the config when omitted.
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Inputs {
    #[arg(long)]
    world: PathBuf,
    /// Trained filter; retrained from the world when omitted.
    #[arg(long)]
    filter: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepKind {
    Capacity,
    Bestofn,
    Ablation,
}

impl SweepKind {
    fn name(self) -> &'static str {
        match self {
            SweepKind::Capacity => "capacity",
            SweepKind::Bestofn => "bestofn",
            SweepKind::Ablation => "ablation",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: kind={} msg={msg}", e.kind());
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Usage errors (2) are problems with what the caller supplied; anything
/// that fails while running is 1.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn resolve_config(cli: &Cli) -> Result<Config, Error> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    Ok(config)
}

fn print_config(config: &Config) {
    println!("# effective config (fingerprint {})", config.fingerprint());
    print!("{}", config.to_toml_string());
    println!("# end config");
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Build(format!("thread pool: {e}")))?;
    }
    let mut config = resolve_config(&cli)?;
    match cli.command {
        Command::GenWorld { out } => {
            print_config(&config);
            let world = generate_world(&config.world, config.world.seed)?;
            world.export(&out)?;
            log::info!(
                "wrote {} topics, {} articles, {} users to {}",
                world.topics.len(),
                world.articles.len(),
                world.users.len(),
                out.display()
            );
        }
        Command::TrainFilter { world, out } => {
            print_config(&config);
            let world = World::import(&world)?;
            let embedder = world.embedder(config.embed.alpha)?;
            let (model, report) = train_filter(&world, &embedder, &config.filter, config.world.seed)?;
            model.save(&out)?;
            log::info!(
                "filter accuracy {:.4} precision {:.4} recall {:.4} on {} held-out behaviors",
                report.accuracy,
                report.precision,
                report.recall,
                report.validation_size
            );
        }
        Command::TrainTeacher { inputs, out, tier, log } => {
            if let Some(t) = tier {
                config.policy.tier = t;
            }
            print_config(&config);
            let services = load_services(&inputs, &config)?;
            let lambdas = Lambdas::from_config(&config.rewards)?;
            let (params, rows) = train_teacher(&services, &config.policy, config.policy.tier, &config.grpo, lambdas)?;
            params.save(&out)?;
            if let Some(path) = log {
                grpo::write_log(&path, &rows)?;
            }
            if let Some(last) = rows.last() {
                log::info!("final step reward {:.4} kl {:.4}", last.mean_reward, last.kl);
            }
        }
        Command::Distill { inputs, mode, teacher, out, log } => {
            if let Some(m) = mode {
                config.distill.mode = m;
            }
            print_config(&config);
            let teacher = match (&teacher, config.distill.mode) {
                (Some(p), _) => Some(PolicyParams::load(p)?),
                (None, DistillMode::None) => None,
                (None, m) => return Err(Error::Config(format!("distill mode {m:?} needs --teacher"))),
            };
            let services = load_services(&inputs, &config)?;
            // Every mode starts from the same warm-started student.
            let student = base_policy(&services, config.distill.student_tier, &config.policy, config.distill.seed)?;
            let lambdas = Lambdas::from_config(&config.rewards)?;
            let (params, rows) =
                distill::distill(student, teacher.as_ref(), &services, &config.distill, &config.grpo, lambdas)?;
            params.save(&out)?;
            if let Some(path) = log {
                distill::write_log(&path, &rows)?;
            }
            if let Some(last) = rows.last() {
                log::info!("final distillation loss {:.5}", last.loss);
            }
        }
        Command::Evaluate { inputs, ckpt, verbatim, n, out } => {
            if let Some(n) = n {
                config.eval.n = n;
            }
            config.validate()?;
            print_config(&config);
            let services = load_services(&inputs, &config)?;
            let report = if verbatim {
                eval_verbatim(&services, &config.eval)?
            } else {
                let path = ckpt.expect("clap requires --ckpt without --verbatim");
                let params = PolicyParams::load(&path)?;
                run_eval(&params, &services, &config.eval, &config.fingerprint())?
            };
            report.write_csv(&out)?;
            let m = &report.aggregate;
            log::info!(
                "recall@10 {:.4} ndcg@10 {:.4} mrr {:.4} over {} users",
                m.recall10,
                m.ndcg10,
                m.mrr,
                report.rows.len()
            );
        }
        Command::Sweep { kind, world, out } => {
            print_config(&config);
            let world = match world {
                Some(dir) => World::import(&dir)?,
                None => generate_world(&config.world, config.world.seed)?,
            };
            let services = Services::build(world, &config)?;
            let rows = match kind {
                SweepKind::Capacity => sweep_capacity(&services, &config, &config.eval.tiers)?,
                SweepKind::Bestofn => sweep_bestofn(&services, &config, &config.eval.n_list)?,
                SweepKind::Ablation => sweep_reward_ablation(&services, &config)?,
            };
            write_sweep_csv(&out, kind.name(), &rows)?;
            log::info!("wrote {} rows to {}", rows.len(), out.join(format!("{}.csv", kind.name())).display());
        }
    }
    Ok(())
}

fn load_services(inputs: &Inputs, config: &Config) -> Result<Services, Error> {
    let world = World::import(&inputs.world)?;
    match &inputs.filter {
        Some(path) => {
            let filter = FilterModel::load(path)?;
            let index = Index::build(&world.articles, &index_params(config))?;
            Services::from_parts(world, index, filter, config)
        }
        None => Services::build(world, config),
    }
}
