//! Trains the ANN baseline and the CGCN on the same synthetic data with the
//! full transfer protocol and prints per-task test accuracies side by side.
//!
//! ```text
//! cargo run --example compare_architectures -- [seed]
//! ```

use std::time::Instant;

use faultgraph::datagen::{generate_dataset, GeneratorConfig};
use faultgraph::eval::{compare, evaluate, Report};
use faultgraph::graph::Topology;
use faultgraph::model::{ArchKind, Task};
use faultgraph::train::{init_model, train_stage_a, transfer_and_finetune, TrainConfig};

fn main() -> faultgraph::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(7);
    let topology = Topology::default_feeder();
    let gen = GeneratorConfig {
        seed,
        ..GeneratorConfig::default()
    };
    let (train, test) = generate_dataset(&topology, &gen)?;
    println!("train {} / test {} samples", train.len(), test.len());

    let cfg = TrainConfig::desk(seed);
    let mut reports = Vec::new();
    for kind in [ArchKind::Ann, ArchKind::Cgcn] {
        let start = Instant::now();
        let model = init_model(kind, &topology, gen.waveform.window, &cfg)?;
        let a = train_stage_a(model, &train, &cfg)?;
        let mut report = Report::new(kind, &test);
        report.push(evaluate(&a.model, &test, Task::Event)?);
        for task in [Task::Type, Task::Phase, Task::Location] {
            let (_, c) = transfer_and_finetune(&a.model, task, &train, &cfg)?;
            report.push(evaluate(&c.model, &test, task)?);
        }
        println!("{kind}: trained in {:.1?}", start.elapsed());
        println!("{}", report.to_text());
        reports.push(report);
    }
    println!("{}", compare(&reports[0], &reports[1])?.to_text());
    Ok(())
}
