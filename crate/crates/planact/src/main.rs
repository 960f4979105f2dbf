//! Command-line driver: dataset generation, the three training stages,
//! batch evaluation, single-episode runs and trace tooling.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use planact::coarse::{
    examples_from_records, load_coarse, plan_examples, pretrain_backbone, pretrain_image_encoder,
    save_coarse, tune_prompts, untrained, CoarseModel, ImagePretrainConfig, PretrainConfig,
    TuneConfig,
};
use planact::corpus::dataset::{generate_dataset, read_dataset, write_dataset, DatasetRecord};
use planact::corpus::{Instruction, RephraseMode, SubstitutionLexicon};
use planact::domain::{TaskId, ALL_TASKS};
use planact::episode::{
    read_trace, replay, run_episode, write_trace, EpisodeSpec, ExecutorMode, FineStack,
    PlanSource, PlannerMode, SkillsMode,
};
use planact::eval::{
    evaluate, guard_unseen_words, render_report, Metrics, RunConfig,
};
use planact::fine::{
    load_policy, save_policy, train_policy, PolicyConfig, PolicyNet, PpoConfig, SkillEmbeddings,
};
use planact::Real;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

const SEED_ENV: &str = "PLANACT_SEED";

#[derive(Parser)]
#[command(name = "planact", version, about = "Coarse-to-fine tabletop manipulation stack")]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed. Overrides the config file; the PLANACT_SEED environment
    /// variable overrides both.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Roll oracle episodes and write the labelled tuning dataset.
    GenData(GenDataArgs),
    /// Pretrain the backbone and image encoder; both are frozen afterwards.
    Pretrain(PretrainArgs),
    /// Tune the planner prompts on a labelled dataset.
    TrainCoarse(TrainCoarseArgs),
    /// Train the skill policy with PPO against the frozen skill embeddings.
    TrainFine(TrainFineArgs),
    /// Batch evaluation over the task set; prints a report.
    Eval(EvalArgs),
    /// Run one episode and optionally write its trace.
    Run(RunArgs),
    /// Re-simulate a trace file and verify every recorded observation.
    Replay(ReplayArgs),
    /// Render a report from saved metrics (JSON).
    Report(ReportArgs),
}

#[derive(Args, Serialize)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    /// Oracle episodes rolled per task.
    #[arg(long)]
    episodes_per_task: Option<usize>,
}

#[derive(Args, Serialize)]
struct PretrainArgs {
    /// Output planner checkpoint (prompts still untuned).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainCoarseArgs {
    /// Pretrained planner checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Labelled dataset from gen-data.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainFineArgs {
    /// Tuned planner checkpoint (source of the frozen skill embeddings).
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the number of PPO updates.
    #[arg(long)]
    updates: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PlannerArg {
    ClosedLoop,
    InferAll,
}

impl From<PlannerArg> for PlannerMode {
    fn from(p: PlannerArg) -> PlannerMode {
        match p {
            PlannerArg::ClosedLoop => PlannerMode::ClosedLoop,
            PlannerArg::InferAll => PlannerMode::InferAll,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum RephraseArg {
    None,
    Verb,
    Noun,
    Both,
}

impl From<RephraseArg> for RephraseMode {
    fn from(r: RephraseArg) -> RephraseMode {
        match r {
            RephraseArg::None => RephraseMode::None,
            RephraseArg::Verb => RephraseMode::Verb,
            RephraseArg::Noun => RephraseMode::Noun,
            RephraseArg::Both => RephraseMode::Both,
        }
    }
}

#[derive(Args, Serialize)]
struct EvalArgs {
    /// Tuned planner checkpoint. Omit only with --oracle-planner.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Policy checkpoint: evaluates task success with learned skills instead
    /// of plan success with scripted executors.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Upper-bound baseline: plan with the labelling oracle.
    #[arg(long)]
    oracle_planner: bool,
    /// Episodes per task (500 mirrors the reference protocol).
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_enum)]
    planner: Option<PlannerArg>,
    /// Unseen-word substitution mode; requires --tuning-data for the
    /// protocol check.
    #[arg(long, value_enum)]
    rephrase: Option<RephraseArg>,
    /// Probability that a successful grasp slips.
    #[arg(long)]
    p_slip: Option<f64>,
    /// Schedule an extra object to appear mid-episode on cleanup tasks.
    #[arg(long)]
    clutter: bool,
    /// Mask the tactile bit from the planner.
    #[arg(long)]
    no_tactile: bool,
    /// Restrict to these task names (repeatable).
    #[arg(long = "task")]
    tasks: Vec<String>,
    /// Tuning dataset to verify the unseen-word premise against.
    #[arg(long)]
    tuning_data: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also save the raw metrics as JSON.
    #[arg(long)]
    save_metrics: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct RunArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    oracle_planner: bool,
    /// Task name, e.g. clean-table.
    #[arg(long)]
    task: String,
    #[arg(long, value_enum)]
    planner: Option<PlannerArg>,
    #[arg(long)]
    p_slip: Option<f64>,
    #[arg(long)]
    no_tactile: bool,
    /// Write the episode trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ReplayArgs {
    #[arg(long)]
    trace: PathBuf,
}

#[derive(Args, Serialize)]
struct ReportArgs {
    /// Metrics JSON written by eval --save-metrics.
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Everything a config file can set. Sections follow the library defaults;
/// partial sections are fine.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct FileConfig {
    seed: Option<u64>,
    /// Oracle episodes per task for gen-data.
    episodes_per_task: Option<usize>,
    /// Whole-plan supervision examples per task added during prompt tuning.
    plan_examples_per_task: Option<usize>,
    eval: RunConfig,
    pretrain: PretrainConfig,
    image: ImagePretrainConfig,
    tune: TuneConfig,
    ppo: PpoConfig,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig> {
        match path {
            None => Ok(FileConfig {
                eval: RunConfig::default(),
                pretrain: PretrainConfig::default(),
                image: ImagePretrainConfig::default(),
                tune: TuneConfig::default(),
                ppo: PpoConfig::default(),
                ..FileConfig::default()
            }),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }
}

/// Seed precedence: environment, then flag, then config file, then default.
fn resolve_seed(cli_seed: Option<u64>, file: &FileConfig) -> Result<(u64, bool)> {
    if let Ok(v) = std::env::var(SEED_ENV) {
        let seed = v.parse().with_context(|| format!("{SEED_ENV}={v} is not a valid seed"))?;
        return Ok((seed, true));
    }
    if let Some(s) = cli_seed {
        return Ok((s, true));
    }
    Ok((file.seed.unwrap_or(7), file.seed.is_some()))
}

fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_string(value).context("hashing config")?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(hex(&digest[..8]))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn log_run<T: Serialize>(cmd: &str, seed: u64, effective: &T) -> Result<()> {
    eprintln!("planact {cmd}: seed={seed} config-hash={}", config_hash(effective)?);
    Ok(())
}

fn parse_tasks(names: &[String]) -> Result<Option<Vec<TaskId>>> {
    if names.is_empty() {
        return Ok(None);
    }
    let mut out = Vec::with_capacity(names.len());
    for n in names {
        out.push(TaskId::from_name(n).with_context(|| {
            let known: Vec<&str> = ALL_TASKS.iter().map(|t| t.name()).collect();
            format!("unknown task '{n}' (expected one of {})", known.join(", "))
        })?);
    }
    Ok(Some(out))
}

fn load_planner(path: &Path) -> Result<CoarseModel<Real>> {
    load_coarse(path).with_context(|| format!("loading planner {}", path.display()))
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("planact: error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut file = FileConfig::load(cli.config.as_deref())?;
    let (seed, explicit) = resolve_seed(cli.seed, &file)?;
    // An explicit master seed re-seeds every stage; otherwise the per-stage
    // seeds from the config (or library defaults) stand.
    if explicit {
        file.pretrain.seed = seed;
        file.image.seed = seed;
        file.tune.seed = seed;
        file.ppo.seed = seed;
        file.eval.seed = seed;
    }

    match cli.cmd {
        Cmd::GenData(args) => {
            let n = args.episodes_per_task.or(file.episodes_per_task).unwrap_or(120);
            log_run("gen-data", seed, &(&args, n))?;
            let records = generate_dataset(n, seed)?;
            write_dataset(&records, &args.out)?;
            println!("wrote {} records to {}", records.len(), args.out.display());
        }
        Cmd::Pretrain(args) => {
            log_run("pretrain", seed, &(&args, &file.pretrain, &file.image))?;
            let mut model = untrained(seed);
            let (backbone, report) = pretrain_backbone(&model.vocab, &file.pretrain)?;
            println!("backbone holdout nll/token {:.4}", report.holdout_nll_per_token);
            model.backbone = backbone;
            let (image, report) = pretrain_image_encoder(model.dim(), &file.image)?;
            println!("image holdout bit accuracy {:.4}", report.holdout_bit_accuracy);
            model.image = image;
            save_coarse(&args.out, &model, seed)?;
            println!("wrote {}", args.out.display());
        }
        Cmd::TrainCoarse(args) => {
            log_run("train-coarse", seed, &(&args, &file.tune))?;
            let mut model = load_planner(&args.model)?;
            let records = read_dataset(&args.data)?;
            let mut examples = examples_from_records(&records);
            let per_task = file.plan_examples_per_task.unwrap_or(40);
            examples.extend(plan_examples(per_task, file.tune.seed ^ 0x9AA9)?);
            let report = tune_prompts(&mut model, &examples, &file.tune)?;
            println!(
                "tuned on {} examples, holdout accuracy {:.4}",
                report.examples, report.holdout_accuracy
            );
            save_coarse(&args.out, &model, seed)?;
            println!("wrote {}", args.out.display());
        }
        Cmd::TrainFine(args) => {
            if let Some(u) = args.updates {
                file.ppo.updates = u;
            }
            log_run("train-fine", seed, &(&args, &file.ppo))?;
            let model = load_planner(&args.model)?;
            let emb = SkillEmbeddings::from_coarse(&model);
            let mut policy =
                PolicyNet::new(PolicyConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed));
            let log = train_policy(&mut policy, &emb, &file.ppo)?;
            if let Some(last) = log.last() {
                println!(
                    "update {}: return {:.3} success {:.3}",
                    last.update, last.mean_return, last.success_rate
                );
            }
            save_policy(&args.out, &policy, seed)?;
            println!("wrote {}", args.out.display());
        }
        Cmd::Eval(args) => {
            let mut rc = file.eval.clone();
            if let Some(t) = args.trials {
                rc.trials = t;
            }
            if let Some(p) = args.planner {
                rc.planner = p.into();
            }
            if let Some(r) = args.rephrase {
                rc.rephrase = r.into();
            }
            if let Some(p) = args.p_slip {
                rc.p_slip = p;
            }
            rc.inject_clutter |= args.clutter;
            rc.tactile &= !args.no_tactile;
            if let Some(tasks) = parse_tasks(&args.tasks)? {
                rc.tasks = Some(tasks);
            }
            log_run("eval", seed, &(&args, &rc))?;

            if rc.rephrase != RephraseMode::None {
                let path = args.tuning_data.as_deref().context(
                    "--rephrase needs --tuning-data to verify the unseen-word premise",
                )?;
                let records: Vec<DatasetRecord> = read_dataset(path)?;
                let lex = SubstitutionLexicon::default();
                guard_unseen_words(&lex, records.iter().map(|r| r.instruction.text.as_str()))?;
            }

            let model = match (&args.model, args.oracle_planner) {
                (Some(path), _) => Some(load_planner(path)?),
                (None, true) => None,
                (None, false) => bail!("eval needs --model or --oracle-planner"),
            };
            let fine = match &args.policy {
                None => None,
                Some(path) => {
                    let m = model.as_ref().context("--policy needs --model for embeddings")?;
                    Some((load_policy(path)?, SkillEmbeddings::from_coarse(m)))
                }
            };
            let planner = match &model {
                Some(m) => PlanSource::Model(m),
                None => PlanSource::Oracle,
            };
            let (stack, skills): (FineStack, SkillsMode) = match &fine {
                Some((p, e)) => (Some((p, e)), SkillsMode::Learned),
                None => (None, SkillsMode::Oracle),
            };
            let metrics = evaluate(&planner, stack, skills, &rc)?;
            if let Some(path) = &args.save_metrics {
                let json = serde_json::to_string_pretty(&metrics)?;
                std::fs::write(path, json)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            emit(&render_report(&metrics), args.out.as_deref())?;
        }
        Cmd::Run(args) => {
            log_run("run", seed, &args)?;
            let task = TaskId::from_name(&args.task)
                .with_context(|| format!("unknown task '{}'", args.task))?;
            let model = match (&args.model, args.oracle_planner) {
                (Some(path), _) => Some(load_planner(path)?),
                (None, true) => None,
                (None, false) => bail!("run needs --model or --oracle-planner"),
            };
            let fine = match &args.policy {
                None => None,
                Some(path) => {
                    let m = model.as_ref().context("--policy needs --model for embeddings")?;
                    Some((load_policy(path)?, SkillEmbeddings::from_coarse(m)))
                }
            };
            let skills = if fine.is_some() { SkillsMode::Learned } else { SkillsMode::Oracle };
            let planner_mode = args.planner.map_or(PlannerMode::ClosedLoop, Into::into);
            let mode = ExecutorMode {
                planner: planner_mode,
                skills,
                tactile: !args.no_tactile,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = Instruction::sample(task, &mut rng);
            let mut spec = EpisodeSpec::new(task, inst.target, mode, seed);
            spec.p_slip = args.p_slip.unwrap_or(0.0);
            let planner = match &model {
                Some(m) => PlanSource::Model(m),
                None => PlanSource::Oracle,
            };
            let stack: FineStack = fine.as_ref().map(|(p, e)| (p, e));
            let trace = run_episode(&planner, stack, &spec)?;
            println!("instruction: {}", spec.instruction().text);
            for step in &trace.steps {
                let skill = step.skill.map_or_else(|| "<invalid>".into(), |s| s.text());
                println!("  {skill}{}", if step.skill_success { "" } else { "  [failed]" });
            }
            println!("status: {:?}", trace.status);
            if let Some(path) = &args.trace {
                write_trace(path, &trace)?;
                println!("wrote {}", path.display());
            }
        }
        Cmd::Replay(args) => {
            log_run("replay", seed, &args)?;
            let trace = read_trace(&args.trace)?;
            let replayed = replay(&trace)?;
            println!(
                "replay ok: {} steps, status {:?}",
                replayed.steps.len(),
                replayed.status
            );
        }
        Cmd::Report(args) => {
            log_run("report", seed, &args)?;
            let text = std::fs::read_to_string(&args.metrics)
                .with_context(|| format!("reading {}", args.metrics.display()))?;
            let metrics: Metrics = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", args.metrics.display()))?;
            emit(&render_report(&metrics), args.out.as_deref())?;
        }
    }
    Ok(())
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        None => print!("{text}"),
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
