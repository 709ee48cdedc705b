//! Adam training and the three-stage transfer protocol: (A) train the event
//! detector end to end, (B) copy its trunk frozen under a fresh task head,
//! (C) unfreeze everything and fine-tune at the low learning rate.

mod loss;
mod optim;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{loss_for, loss_rows};
pub use optim::{adam_step, AdamConfig, OptimizerState};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::eval::count_correct;
use crate::graph::Topology;
use crate::model::{init_params, ArchKind, ArchitectureSpec, CheckpointMeta, Model, Stage, Task};
use crate::tensor::{Mode, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs_stage_a: usize,
    pub epochs_stage_b: usize,
    pub epochs_stage_c: usize,
    pub lr_initial: f64,
    pub lr_after: f64,
    /// First 0-based epoch trained at `lr_after`.
    pub lr_switch_epoch: usize,
    pub adam: AdamConfig,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs_stage_a: 120,
            epochs_stage_b: 120,
            epochs_stage_c: 30,
            lr_initial: 0.01,
            lr_after: 0.001,
            lr_switch_epoch: 120,
            adam: AdamConfig::default(),
            dropout_rate: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Short schedule for CPU smoke runs: 60/60/15 epochs, rate drop at 45.
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            epochs_stage_a: 60,
            epochs_stage_b: 60,
            epochs_stage_c: 15,
            lr_switch_epoch: 45,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr_initial > 0.0 && self.lr_after > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::Config(format!("bad Adam constants {a:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }
}

/// Step schedule: `lr_initial` before `lr_switch_epoch`, `lr_after` from it on.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.lr_switch_epoch {
        cfg.lr_initial
    } else {
        cfg.lr_after
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub task: Task,
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's scored samples.
    pub loss: f64,
    /// Training accuracy from the same (train-mode) forward passes.
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn extend(&mut self, other: History) {
        self.records.extend(other.records);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["stage", "task", "epoch", "lr", "loss", "accuracy"])
            .map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.stage.name(),
                r.task.name(),
                &r.epoch.to_string(),
                &r.lr.to_string(),
                &format!("{:.6}", r.loss),
                &format!("{:.6}", r.accuracy),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("in-memory csv");
        String::from_utf8(out).expect("csv is UTF-8")
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Result of one protocol stage.
#[derive(Clone, Debug)]
pub struct StageOutput {
    pub model: Model,
    pub history: History,
    pub meta: CheckpointMeta,
}

fn stage_rng(cfg: &TrainConfig, stage: Stage, task: Task) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let s = match stage {
        Stage::Scratch => 0,
        Stage::Transfer => 1,
        Stage::Finetune => 2,
    };
    rng.set_stream(s * 8 + Task::ALL.iter().position(|&t| t == task).unwrap() as u64);
    rng
}

/// A freshly initialized model with only the event head.
pub fn init_model(
    kind: ArchKind,
    topology: &Topology,
    window: usize,
    cfg: &TrainConfig,
) -> Result<Model> {
    let mut spec = ArchitectureSpec::new(kind, topology.n_nodes(), window);
    spec.dropout_rate = cfg.dropout_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let params = init_params(&spec, &mut rng)?.with_heads(&[Task::Event]);
    Model::new(params, topology.clone())
}

fn check_data(model: &Model, data: &Dataset) -> Result<()> {
    data.check_topology(model.topology())?;
    let spec = model.spec();
    if data.manifest.window != spec.window || data.manifest.n_nodes != spec.n_nodes {
        return Err(Error::Compatibility(format!(
            "dataset windows are {}×3×{}, model expects {}×3×{}",
            data.manifest.n_nodes, data.manifest.window, spec.n_nodes, spec.window
        )));
    }
    Ok(())
}

/// Trains `model`'s `task` head (and any unfrozen trunk parameters) for
/// `epochs` epochs with a fresh optimizer. Only samples that contribute to
/// the task's loss are drawn into batches.
#[allow(clippy::too_many_arguments)]
pub fn train_epochs(
    model: &mut Model,
    task: Task,
    data: &Dataset,
    epochs: usize,
    lr: impl Fn(usize) -> f64,
    stage: Stage,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<History> {
    cfg.validate()?;
    check_data(model, data)?;
    let labels: Vec<_> = data.labels().copied().collect();
    let mut order = loss_rows(task, &labels);
    let mut state = OptimizerState::new();
    let mut history = History::default();
    for epoch in 0..epochs {
        let rate = lr(epoch);
        order.shuffle(rng);
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        let (mut correct, mut scored) = (0, 0);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch_labels: Vec<_> = chunk.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let x = tape.constant(data.batch_x(chunk));
            let out = model.forward(&mut tape, &bound, task, x, Mode::Train, rng)?;
            let Some(loss) = loss_for(task, &mut tape, out, &batch_labels)? else {
                continue;
            };
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: value,
                });
            }
            let rows = loss_rows(task, &batch_labels).len();
            loss_sum += value * rows as f64;
            loss_n += rows;
            let (c, s) = count_correct(task, tape.value(out), &batch_labels);
            correct += c;
            scored += s;

            tape.backward(loss)?;
            model.params.store_grads(&tape, &bound)?;
            adam_step(&mut model.params, &mut state, rate, &cfg.adam)?;
        }
        history.records.push(EpochRecord {
            stage,
            task,
            epoch,
            lr: rate,
            loss: if loss_n > 0 {
                loss_sum / loss_n as f64
            } else {
                0.0
            },
            accuracy: if scored > 0 {
                correct as f64 / scored as f64
            } else {
                0.0
            },
        });
    }
    model.params.clear_grads();
    Ok(history)
}

/// Stage A: the event detector, trained end to end on the step schedule.
pub fn train_stage_a(model: Model, train: &Dataset, cfg: &TrainConfig) -> Result<StageOutput> {
    let mut model = Model::new(
        model.params.with_heads(&[Task::Event]),
        model.topology().clone(),
    )?;
    model.params.unfreeze_all();
    let mut rng = stage_rng(cfg, Stage::Scratch, Task::Event);
    let history = train_epochs(
        &mut model,
        Task::Event,
        train,
        cfg.epochs_stage_a,
        |e| lr_at(e, cfg),
        Stage::Scratch,
        cfg,
        &mut rng,
    )?;
    Ok(StageOutput {
        model,
        history,
        meta: CheckpointMeta {
            task: Task::Event,
            stage: Stage::Scratch,
            trunk_source: None,
            epochs: cfg.epochs_stage_a,
            seed: cfg.seed,
        },
    })
}

/// Stage B: the event model's trunk, frozen, under a fresh `task` head.
pub fn transfer(
    event: &Model,
    task: Task,
    train: &Dataset,
    cfg: &TrainConfig,
) -> Result<StageOutput> {
    if task == Task::Event {
        return Err(Error::Parameter(
            "the event head is trained from scratch, not transferred".into(),
        ));
    }
    let mut rng = stage_rng(cfg, Stage::Transfer, task);
    let params = event.params.transfer(task, &mut rng);
    let mut model = Model::new(params, event.topology().clone())?;
    let history = train_epochs(
        &mut model,
        task,
        train,
        cfg.epochs_stage_b,
        |e| lr_at(e, cfg),
        Stage::Transfer,
        cfg,
        &mut rng,
    )?;
    Ok(StageOutput {
        model,
        history,
        meta: CheckpointMeta {
            task,
            stage: Stage::Transfer,
            trunk_source: Some(event.params.trunk_digest()),
            epochs: cfg.epochs_stage_b,
            seed: cfg.seed,
        },
    })
}

/// Stage C: every parameter unfrozen, fixed rate `lr_after`.
pub fn finetune(
    model: Model,
    task: Task,
    train: &Dataset,
    cfg: &TrainConfig,
    trunk_source: Option<String>,
) -> Result<StageOutput> {
    if !model.params.has_head(task) {
        return Err(Error::Parameter(format!(
            "model has no {task} head to fine-tune"
        )));
    }
    let mut model = Model::new(model.params.with_heads(&[task]), model.topology().clone())?;
    model.params.unfreeze_all();
    let mut rng = stage_rng(cfg, Stage::Finetune, task);
    let history = train_epochs(
        &mut model,
        task,
        train,
        cfg.epochs_stage_c,
        |_| cfg.lr_after,
        Stage::Finetune,
        cfg,
        &mut rng,
    )?;
    Ok(StageOutput {
        model,
        history,
        meta: CheckpointMeta {
            task,
            stage: Stage::Finetune,
            trunk_source,
            epochs: cfg.epochs_stage_c,
            seed: cfg.seed,
        },
    })
}

/// Stages B and C back to back; returns both stage outputs.
pub fn transfer_and_finetune(
    event: &Model,
    task: Task,
    train: &Dataset,
    cfg: &TrainConfig,
) -> Result<(StageOutput, StageOutput)> {
    let b = transfer(event, task, train, cfg)?;
    let c = finetune(
        b.model.clone(),
        task,
        train,
        cfg,
        b.meta.trunk_source.clone(),
    )?;
    Ok((b, c))
}
