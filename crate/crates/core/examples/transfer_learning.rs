//! Runs the three-stage protocol for one task: event training from
//! scratch, a frozen-trunk transfer stage, then end-to-end fine-tuning,
//! reporting test accuracy after each stage.
//!
//! ```text
//! cargo run --release --example transfer_learning -- [type|phase|location]
//! ```

use faultgraph::datagen::{generate_dataset, GeneratorConfig};
use faultgraph::eval::evaluate;
use faultgraph::graph::Topology;
use faultgraph::model::{ArchKind, ModelParams, Task};
use faultgraph::train::{finetune, init_model, train_stage_a, transfer, TrainConfig};

fn main() -> faultgraph::Result<()> {
    let task: Task = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "phase".into())
        .parse()?;
    let topology = Topology::default_feeder();
    let gen = GeneratorConfig {
        n_load_scenarios: 3,
        n_nonfault: 300,
        ..GeneratorConfig::default()
    };
    let (train, test) = generate_dataset(&topology, &gen)?;
    let cfg = TrainConfig {
        epochs_stage_a: 20,
        epochs_stage_b: 20,
        epochs_stage_c: 5,
        lr_switch_epoch: 15,
        ..TrainConfig::desk(2)
    };

    let model = init_model(ArchKind::Cgcn, &topology, gen.waveform.window, &cfg)?;
    let a = train_stage_a(model, &train, &cfg)?;
    println!(
        "A  event      {:.2}%",
        100.0 * evaluate(&a.model, &test, Task::Event)?.accuracy
    );

    let b = transfer(&a.model, task, &train, &cfg)?;
    let trunk = |p: &ModelParams| p.trunk_digest();
    println!(
        "B  {task:<10} {:.2}%  trunk unchanged: {}",
        100.0 * evaluate(&b.model, &test, task)?.accuracy,
        trunk(&b.model.params) == trunk(&a.model.params)
    );

    let c = finetune(b.model, task, &train, &cfg, b.meta.trunk_source.clone())?;
    println!(
        "C  {task:<10} {:.2}%  trunk unchanged: {}",
        100.0 * evaluate(&c.model, &test, task)?.accuracy,
        trunk(&c.model.params) == trunk(&a.model.params)
    );
    Ok(())
}
