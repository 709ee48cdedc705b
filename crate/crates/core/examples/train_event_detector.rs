//! Trains the CGCN event detector from scratch on a reduced dataset and
//! saves the checkpoint with its per-epoch history.
//!
//! ```text
//! cargo run --release --example train_event_detector -- [epochs]
//! ```

use faultgraph::datagen::{generate_dataset, GeneratorConfig};
use faultgraph::eval::evaluate;
use faultgraph::graph::Topology;
use faultgraph::model::{ArchKind, Checkpoint, Task};
use faultgraph::train::{init_model, train_stage_a, TrainConfig};

fn main() -> faultgraph::Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(20);
    let topology = Topology::default_feeder();
    let gen = GeneratorConfig {
        n_load_scenarios: 3,
        n_nonfault: 300,
        ..GeneratorConfig::default()
    };
    let (train, test) = generate_dataset(&topology, &gen)?;
    let cfg = TrainConfig {
        epochs_stage_a: epochs,
        lr_switch_epoch: epochs * 3 / 4,
        ..TrainConfig::desk(1)
    };

    let model = init_model(ArchKind::Cgcn, &topology, gen.waveform.window, &cfg)?;
    let out = train_stage_a(model, &train, &cfg)?;
    for r in &out.history.records {
        println!(
            "epoch {:>3}  lr {:.4}  loss {:.4}  train acc {:.3}",
            r.epoch, r.lr, r.loss, r.accuracy
        );
    }
    let e = evaluate(&out.model, &test, Task::Event)?;
    println!(
        "\ntest event accuracy {:.2}%\n{}",
        100.0 * e.accuracy,
        e.matrix.to_text()
    );

    Checkpoint::new(&out.model, out.meta.clone()).save("event.fgck")?;
    out.history
        .write_csv(std::fs::File::create("event.history.csv")?)?;
    println!("wrote event.fgck and event.history.csv");
    Ok(())
}
