use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use faultgraph::datagen::{Dataset, Generator, GeneratorConfig};
use faultgraph::eval::{compare, evaluate, Diagnoser, Report};
use faultgraph::graph::Topology;
use faultgraph::model::{ArchKind, Checkpoint, Task};
use faultgraph::train::{finetune, init_model, train_stage_a, transfer, StageOutput, TrainConfig};
use faultgraph::{Error, Result, Tensor};

#[derive(Parser)]
#[command(
    name = "faultgraph",
    version,
    about = "Graph-based fault diagnosis for distribution feeders"
)]
struct Cli {
    /// Overrides the seed of both the generator and the trainer.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Topology file; the built-in 13-bus feeder when absent.
    #[arg(long, global = true)]
    topology: Option<PathBuf>,
    /// TOML file with optional `[generator]` and `[train]` tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test datasets.
    Gen {
        #[arg(long)]
        scenarios: Option<usize>,
        #[arg(long)]
        nonfault: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the event detector from scratch.
    Train {
        #[arg(long, default_value = "cgcn")]
        arch: ArchKind,
        #[arg(long, default_value = "event")]
        task: Task,
        #[command(flatten)]
        io: StageIo,
    },
    /// Train a fresh task head on a frozen event trunk.
    Transfer {
        #[arg(long)]
        task: Task,
        /// Event checkpoint.
        #[arg(long)]
        from: PathBuf,
        #[command(flatten)]
        io: StageIo,
    },
    /// Unfreeze a transferred model and train it end to end.
    Finetune {
        /// Transferred checkpoint.
        #[arg(long)]
        from: PathBuf,
        #[command(flatten)]
        io: StageIo,
    },
    /// Score checkpoints on a dataset and write a report.
    Eval {
        /// One checkpoint per task, all of one architecture.
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        /// Dataset file or directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Report JSON path; confusion CSVs are written beside it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two reports task by task.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Diagnose one window with four task checkpoints.
    Infer {
        #[arg(long)]
        event: PathBuf,
        #[arg(long = "type")]
        fault_type: PathBuf,
        #[arg(long)]
        phase: PathBuf,
        #[arg(long)]
        location: PathBuf,
        /// CSV window, one row per bus with 3·K values (phase-major).
        #[arg(long, conflicts_with_all = ["data", "index"])]
        window: Option<PathBuf>,
        /// Dataset file to take the window from.
        #[arg(long, requires = "index")]
        data: Option<PathBuf>,
        #[arg(long)]
        index: Option<usize>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct StageIo {
    /// Dataset directory (or train split file).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the checkpoint and history.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    generator: GeneratorConfig,
    train: TrainConfig,
}

struct Context {
    topology: Topology,
    config: RunConfig,
}

fn load_context(cli: &Cli) -> Result<Context> {
    let topology = match &cli.topology {
        Some(p) => Topology::load(p)?,
        None => Topology::default_feeder(),
    };
    let mut config = match &cli.config {
        Some(p) => toml::from_str::<RunConfig>(&std::fs::read_to_string(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.generator.seed = seed;
        config.train.seed = seed;
    }
    config.train.validate()?;
    Ok(Context { topology, config })
}

/// A dataset path may name the file or the directory `gen` wrote.
fn dataset_path(path: &Path, split: &str) -> PathBuf {
    if path.is_dir() {
        path.join(format!("{split}.fgds"))
    } else {
        path.to_owned()
    }
}

fn checkpoint_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("model.fgck")
    } else if path.exists() {
        path.to_owned()
    } else {
        let mut p = path.as_os_str().to_owned();
        p.push(".fgck");
        p.into()
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let path = checkpoint_path(path);
    if !path.exists() {
        return Err(Error::Validation(format!(
            "no checkpoint at {}",
            path.display()
        )));
    }
    Checkpoint::load(path)
}

fn load_dataset(path: &Path, split: &str) -> Result<Dataset> {
    let path = dataset_path(path, split);
    if !path.exists() {
        return Err(Error::Validation(format!(
            "no dataset at {}",
            path.display()
        )));
    }
    Dataset::load(path)
}

fn load_data(ctx: &Context, path: &Path, split: &str) -> Result<Dataset> {
    let data = load_dataset(path, split)?;
    data.check_topology(&ctx.topology)?;
    Ok(data)
}

fn save_stage(out: &Path, name: &str, stage: &StageOutput) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let ckpt = out.join(format!("{name}.fgck"));
    Checkpoint::new(&stage.model, stage.meta.clone()).save(&ckpt)?;
    stage.history.write_csv(std::fs::File::create(
        out.join(format!("{name}.history.csv")),
    )?)?;
    let last = stage.history.last();
    println!(
        "{} {} -> {} (final loss {}, train accuracy {})",
        stage.meta.stage,
        stage.meta.task,
        ckpt.display(),
        last.map_or("-".into(), |r| format!("{:.5}", r.loss)),
        last.map_or("-".into(), |r| format!("{:.4}", r.accuracy)),
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let ctx = load_context(&cli)?;
    match cli.command {
        Command::Gen {
            scenarios,
            nonfault,
            out,
        } => {
            let mut cfg = ctx.config.generator.clone();
            cfg.n_load_scenarios = scenarios.unwrap_or(cfg.n_load_scenarios);
            cfg.n_nonfault = nonfault.unwrap_or(cfg.n_nonfault);
            let generator = Generator::new(&ctx.topology, cfg)?;
            let (train, test) = generator.plan_split();
            std::fs::create_dir_all(&out)?;
            for plan in [&train, &test] {
                let path = out.join(format!("{}.fgds", plan.split));
                generator.save_plan(plan, &path)?;
                println!(
                    "{}: {} samples ({} fault, {} non-fault) -> {}",
                    plan.split,
                    plan.len(),
                    plan.n_fault(),
                    plan.n_nonfault(),
                    path.display()
                );
            }
        }
        Command::Train { arch, task, io } => {
            if task != Task::Event {
                return Err(Error::Validation(format!(
                    "only the event head trains from scratch; use `transfer --task {task}`"
                )));
            }
            let data = load_data(&ctx, &io.data, "train")?;
            let cfg = &ctx.config.train;
            let model = init_model(arch, &ctx.topology, data.manifest.window, cfg)?;
            save_stage(&io.out, "event", &train_stage_a(model, &data, cfg)?)?;
        }
        Command::Transfer { task, from, io } => {
            let event = load_checkpoint(&from)?.model()?;
            let data = load_data(&ctx, &io.data, "train")?;
            let stage = transfer(&event, task, &data, &ctx.config.train)?;
            save_stage(&io.out, &format!("{}.transfer", task.name()), &stage)?;
        }
        Command::Finetune { from, io } => {
            let ckpt = load_checkpoint(&from)?;
            let task = ckpt.meta.task;
            let data = load_data(&ctx, &io.data, "train")?;
            let stage = finetune(
                ckpt.model()?,
                task,
                &data,
                &ctx.config.train,
                ckpt.meta.trunk_source.clone(),
            )?;
            save_stage(&io.out, task.name(), &stage)?;
        }
        Command::Eval {
            models,
            data,
            split,
            out,
        } => {
            let data = load_data(&ctx, &data, &split)?;
            let mut report: Option<Report> = None;
            for path in &models {
                let ckpt = load_checkpoint(path)?;
                let model = ckpt.model()?;
                let r = report.get_or_insert_with(|| Report::new(model.spec().kind, &data));
                if r.arch != model.spec().kind {
                    return Err(Error::Validation(format!(
                        "{} is {}, earlier checkpoints are {}",
                        path.display(),
                        model.spec().kind,
                        r.arch
                    )));
                }
                r.push(evaluate(&model, &data, ckpt.meta.task)?);
            }
            let report = report.expect("at least one model");
            print!("{}", report.to_text());
            if let Some(out) = out {
                if let Some(dir) = out.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                std::fs::write(&out, report.to_json())?;
                for e in &report.evaluations {
                    let csv = out.with_extension(format!("{}.csv", e.task.name()));
                    std::fs::write(csv, e.matrix.to_csv())?;
                }
            }
        }
        Command::Compare { a, b, csv } => {
            let load = |p: &Path| Report::from_json(&std::fs::read_to_string(p)?);
            let c = compare(&load(&a)?, &load(&b)?)?;
            print!("{}", c.to_text());
            if let Some(csv) = csv {
                std::fs::write(csv, c.to_csv())?;
            }
        }
        Command::Infer {
            event,
            fault_type,
            phase,
            location,
            window,
            data,
            index,
            json,
        } => {
            let load = |p: &Path| load_checkpoint(p)?.model();
            let diagnoser = Diagnoser::new(
                load(&event)?,
                load(&fault_type)?,
                load(&phase)?,
                load(&location)?,
            )?;
            let x = match (window, data, index) {
                (Some(w), _, _) => read_window(&w, &ctx.topology)?,
                (None, Some(d), Some(i)) => {
                    let data = load_dataset(&d, "test")?;
                    data.samples
                        .get(i)
                        .ok_or_else(|| {
                            Error::Validation(format!("index {i} outside 0..{}", data.len()))
                        })?
                        .x
                        .clone()
                }
                _ => {
                    return Err(Error::Validation(
                        "give --window, or --data with --index".into(),
                    ))
                }
            };
            let d = diagnoser.diagnose(&x)?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&d).expect("diagnosis serializes")
                );
            } else {
                print!("{}", d.to_text());
            }
        }
    }
    Ok(())
}

fn read_window(path: &Path, topology: &Topology) -> Result<Tensor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    let mut data = Vec::new();
    let mut width = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Validation(format!("row {}: {e}", row + 1)))?;
        if *width.get_or_insert(record.len()) != record.len() {
            return Err(Error::Validation(format!(
                "row {} has a different width",
                row + 1
            )));
        }
        for field in &record {
            data.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Validation(format!("row {}: '{field}': {e}", row + 1)))?,
            );
        }
    }
    let n = topology.n_nodes();
    let width = width.unwrap_or(0);
    if data.len() != n * width || width % 3 != 0 || width == 0 {
        return Err(Error::Validation(format!(
            "window must have {n} rows of 3·K values"
        )));
    }
    Tensor::new(vec![n, 3, width / 3], data)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
