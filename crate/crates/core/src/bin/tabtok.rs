use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use tabtok::ablation::AblationConfig;
use tabtok::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use tabtok::experiment::{run_ablation_suite, STANDARD_VARIANTS};
use tabtok::metrics::{magnitude_geometry_report, MetricName, MetricReport};
use tabtok::model::ModelConfig;
use tabtok::synthetic::{gen_synthetic, SyntheticTaskSpec};
use tabtok::table::{load_csv, Dataset, FeatureSchema, TableError};
use tabtok::train::{self, finetune, pretrain, FinetuneConfig, Init, PretrainConfig, TaskMode, TrainError};

#[derive(Parser)]
#[command(name = "tabtok", version, about = "Magnitude-token tabular transformer")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// JSON config file for the verb
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// accepted for reproducible runs; all training is single-threaded and seeded
    #[arg(long, global = true)]
    deterministic: bool,
    /// output root
    #[arg(long, global = true, env = "TABTOK_RUN_DIR", default_value = "runs")]
    run_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Binclass,
    Regression,
    Joint,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Pretrained,
    Random,
    Vocab,
}

#[derive(Subcommand)]
enum Verb {
    /// Pre-train a shared trunk over several tables
    Pretrain {
        /// CSV files, paired with --schema in order
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        #[arg(long, required = true)]
        schema: Vec<PathBuf>,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long)]
        ablate: Vec<String>,
    },
    /// Fine-tune on one table and report the test metric
    Finetune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "pretrained")]
        init: InitArg,
        #[arg(long)]
        ablate: Vec<String>,
    },
    /// Score a fine-tuned checkpoint on a table
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare ablation variants against the default configuration
    Ablate {
        #[arg(long)]
        data: Vec<PathBuf>,
        #[arg(long)]
        schema: Vec<PathBuf>,
        /// variants to run; defaults to the standard six
        #[arg(long)]
        ablate: Vec<String>,
    },
    /// Rank correlation between magnitude-bin gaps and embedding distances
    InspectEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
    },
    /// Write a synthetic table (data.csv + schema.json)
    GenSynthetic {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(anyhow::Error),
    Data(anyhow::Error),
    Numeric(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }
}

fn classify_train(e: TrainError) -> Failure {
    match e {
        TrainError::NumericFailure { .. } => Failure::Numeric(e.into()),
        TrainError::Table(_) | TrainError::Preprocess(_) | TrainError::Metric(_) | TrainError::Log(_) => Failure::Data(e.into()),
        _ => Failure::Config(e.into()),
    }
}

fn data_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Data(e.into())
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn ckpt_err(e: CheckpointError) -> Failure {
    match e {
        CheckpointError::Io(_) | CheckpointError::CorruptFile(_) => data_err(e),
        _ => config_err(e),
    }
}

fn read_config<T: DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T, Failure> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(Failure::Config)?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display())).map_err(Failure::Config)
        }
    }
}

fn load_table(data: &Path, schema: &Path) -> Result<Dataset, Failure> {
    let s = FeatureSchema::from_json_file(schema).map_err(|e| match e {
        TableError::InvalidSchema(_) | TableError::Json(_) => config_err(e),
        _ => data_err(e),
    })?;
    let mut ds = load_csv(data, &s).map_err(data_err)?;
    // `dir/data.csv` is named after `dir`
    let stem = data.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "table".into());
    ds.name = match (stem.as_str(), data.parent().and_then(Path::file_name)) {
        ("data", Some(dir)) => dir.to_string_lossy().into_owned(),
        _ => stem,
    };
    Ok(ds)
}

fn load_tables(data: &[PathBuf], schema: &[PathBuf]) -> Result<Vec<Dataset>, Failure> {
    if data.len() != schema.len() {
        return Err(config_err(anyhow::anyhow!("{} --data but {} --schema", data.len(), schema.len())));
    }
    data.iter().zip(schema).map(|(d, s)| load_table(d, s)).collect()
}

fn run_dir(root: &Path, name: &str) -> Result<PathBuf, Failure> {
    let dir = root.join(name);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display())).map_err(Failure::Data)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).expect("serializable");
    fs::write(path, text).with_context(|| format!("writing {}", path.display())).map_err(Failure::Data)
}

fn apply_ablations(model: &mut ModelConfig, tokens: &[String]) -> Result<(), Failure> {
    for t in tokens {
        model.ablation.apply(t).map_err(config_err)?;
    }
    Ok(())
}

/// Fine-tune config file: training settings plus the model used for
/// random initialisation.
#[derive(serde::Deserialize, Serialize, Default)]
#[serde(default)]
struct FinetuneFile {
    #[serde(flatten)]
    train: FinetuneConfig,
    model: Option<ModelConfig>,
    max_words: Option<usize>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let root = cli.run_dir.clone();
    match cli.verb {
        Verb::Pretrain { data, schema, task, ablate } => {
            let mut cfg: PretrainConfig = read_config(&cli.config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(t) = task {
                cfg.task_mode = match t {
                    TaskArg::Binclass => TaskMode::BinclassOnly,
                    TaskArg::Regression => TaskMode::RegressionOnly,
                    TaskArg::Joint => TaskMode::Joint,
                };
            }
            apply_ablations(&mut cfg.model, &ablate)?;
            let tables = load_tables(&data, &schema)?;
            let dir = run_dir(&root, &format!("pretrain-{}-seed{}", cfg.model.ablation.tag(), cfg.seed))?;
            write_json(&dir.join("config.json"), &cfg)?;
            let log = File::create(dir.join("log.jsonl")).map_err(data_err)?;
            let mut log = BufWriter::new(log);
            let out = pretrain(&tables, &cfg, &mut log).map_err(classify_train)?;
            save_checkpoint(&out.checkpoint, dir.join("checkpoint")).map_err(ckpt_err)?;
            println!(
                "best avg val loss {:.6} at epoch {}; checkpoint in {}",
                out.checkpoint.best_val_loss.unwrap_or(f64::NAN),
                out.checkpoint.epoch,
                dir.join("checkpoint").display()
            );
        }
        Verb::Finetune { data, schema, checkpoint, init, ablate } => {
            let mut file: FinetuneFile = read_config(&cli.config)?;
            if let Some(s) = cli.seed {
                file.train.seed = s;
                file.train.split.seed = s;
            }
            let ds = load_table(&data, &schema)?;
            let ckpt = checkpoint.as_ref().map(load_checkpoint).transpose().map_err(ckpt_err)?;
            let mut model = file.model.or(ckpt.as_ref().map(|c| c.model.config)).unwrap_or_default();
            apply_ablations(&mut model, &ablate)?;
            let init = match (init, &ckpt) {
                (InitArg::Random, _) => Init::Random { model, max_words: file.max_words.unwrap_or(4096) },
                (InitArg::Pretrained, Some(c)) => Init::Pretrained(c),
                (InitArg::Vocab, Some(c)) => Init::VocabOnly(c),
                (_, None) => return Err(config_err(anyhow::anyhow!("--init pretrained/vocab needs --checkpoint"))),
            };
            let out = finetune(init, &ds, &file.train).map_err(classify_train)?;
            let dir = run_dir(&root, &format!("finetune-{}-{}-seed{}", ds.name, out.report.arm, file.train.seed))?;
            write_json(&dir.join("config.json"), &file)?;
            write_json(&dir.join("report.json"), &out.report)?;
            save_checkpoint(&out.checkpoint(), dir.join("checkpoint")).map_err(ckpt_err)?;
            println!("{} test {:?} = {:.6} ({} epochs)", ds.name, out.report.metric, out.report.value, out.epochs_run);
        }
        Verb::Evaluate { data, schema, checkpoint } => {
            let ckpt = load_checkpoint(&checkpoint).map_err(ckpt_err)?;
            let head = ckpt.heads.first().ok_or_else(|| config_err(anyhow::anyhow!("checkpoint has no fine-tuned head")))?;
            let ds = load_table(&data, &schema)?;
            let enc = head.preprocessor.encode(&ckpt.model.vocab, &ds).map_err(data_err)?;
            let value = train::evaluate(&ckpt.model, 0, &head.preprocessor, &enc).map_err(classify_train)?;
            let report = MetricReport {
                dataset: ds.name.clone(),
                task: ds.task(),
                metric: MetricName::for_task(ds.task()),
                value,
                split_sizes: [0, 0, ds.len()],
                seed: cli.seed.unwrap_or(0),
                arm: "evaluate".into(),
            };
            let dir = run_dir(&root, &format!("evaluate-{}", ds.name))?;
            write_json(&dir.join("report.json"), &report)?;
            println!("{} {:?} = {:.6}", ds.name, report.metric, report.value);
        }
        Verb::Ablate { data, schema, ablate } => {
            let mut file: FinetuneFile = read_config(&cli.config)?;
            if let Some(s) = cli.seed {
                file.train.seed = s;
                file.train.split.seed = s;
            }
            let tables = if data.is_empty() {
                vec![gen_synthetic(&SyntheticTaskSpec { seed: file.train.seed, ..SyntheticTaskSpec::default() }).map_err(config_err)?]
            } else {
                load_tables(&data, &schema)?
            };
            let variants: Vec<Vec<String>> = if ablate.is_empty() {
                STANDARD_VARIANTS.iter().map(|v| vec![v.to_string()]).collect()
            } else {
                ablate.iter().map(|v| v.split('+').map(str::to_string).collect()).collect()
            };
            for v in &variants {
                AblationConfig::from_tokens(v).map_err(config_err)?;
            }
            let model = file.model.unwrap_or_else(ModelConfig::tiny);
            let suite = run_ablation_suite(model, file.max_words.unwrap_or(4096), &variants, &tables, &file.train).map_err(classify_train)?;
            let dir = run_dir(&root, &format!("ablate-seed{}", file.train.seed))?;
            write_json(&dir.join("ablation.json"), &suite)?;
            let table = suite.render();
            fs::write(dir.join("ablation.txt"), &table).map_err(data_err)?;
            print!("{table}");
        }
        Verb::InspectEmbeddings { checkpoint, pairs } => {
            let ckpt = load_checkpoint(&checkpoint).map_err(ckpt_err)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
            let m = &ckpt.model;
            let report = magnitude_geometry_report(&m.params, m.tables.magnitude, &m.reg_head, pairs, &mut rng).map_err(config_err)?;
            let dir = run_dir(&root, "inspect-embeddings")?;
            write_json(&dir.join("geometry.json"), &report)?;
            println!("spearman {:.4}{}", report.spearman, if report.degenerate { " (degenerate)" } else { "" });
        }
        Verb::GenSynthetic { out } => {
            let mut spec: SyntheticTaskSpec = read_config(&cli.config)?;
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let ds = gen_synthetic(&spec).map_err(config_err)?;
            let dir = match out {
                Some(d) => {
                    fs::create_dir_all(&d).map_err(data_err)?;
                    d
                }
                None => run_dir(&root, &format!("synthetic-{}-seed{}", spec.name, spec.seed))?,
            };
            ds.write_csv(dir.join("data.csv")).map_err(data_err)?;
            ds.schema.to_json_file(dir.join("schema.json")).map_err(data_err)?;
            write_json(&dir.join("spec.json"), &spec)?;
            println!("{} rows written to {}", ds.len(), dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = f.code();
            let (Failure::Config(e) | Failure::Data(e) | Failure::Numeric(e)) = f;
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
