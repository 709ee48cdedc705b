//! End-to-end diagnosis of single windows with four task models trained
//! on a shared event trunk.

use faultgraph::datagen::{generate_dataset, GeneratorConfig};
use faultgraph::eval::Diagnoser;
use faultgraph::graph::Topology;
use faultgraph::model::{ArchKind, Task};
use faultgraph::train::{init_model, train_stage_a, transfer_and_finetune, TrainConfig};

fn main() -> faultgraph::Result<()> {
    let topology = Topology::default_feeder();
    let gen = GeneratorConfig {
        n_load_scenarios: 2,
        n_nonfault: 200,
        ..GeneratorConfig::default()
    };
    let (train, test) = generate_dataset(&topology, &gen)?;
    let cfg = TrainConfig {
        epochs_stage_a: 15,
        epochs_stage_b: 15,
        epochs_stage_c: 3,
        lr_switch_epoch: 10,
        ..TrainConfig::desk(4)
    };

    let model = init_model(ArchKind::Cgcn, &topology, gen.waveform.window, &cfg)?;
    let event = train_stage_a(model, &train, &cfg)?.model;
    let mut heads = Vec::new();
    for task in [Task::Type, Task::Phase, Task::Location] {
        heads.push(transfer_and_finetune(&event, task, &train, &cfg)?.1.model);
    }
    let [fault_type, phase, location]: [_; 3] = heads.try_into().expect("three heads");
    let diagnoser = Diagnoser::new(event, fault_type, phase, location)?;

    for s in test.samples.iter().step_by(test.len() / 4) {
        let l = &s.label;
        match l.location {
            Some(b) => println!(
                "truth:    {} at bus {}, phases {:?}",
                l.fault_type,
                b + 1,
                l.phase
            ),
            None => println!("truth:    no fault"),
        }
        print!("{}", diagnoser.diagnose(&s.x)?.to_text());
        println!();
    }
    Ok(())
}
