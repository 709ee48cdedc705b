//! Generates the desk-scale train/test split for the built-in feeder,
//! prints class counts and writes both splits next to each other.
//!
//! ```text
//! cargo run --example generate_dataset -- [out-dir]
//! ```

use faultgraph::datagen::{generate_dataset, FaultType, GeneratorConfig};
use faultgraph::graph::Topology;

fn main() -> faultgraph::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "data".into());
    std::fs::create_dir_all(&out)?;
    let topology = Topology::default_feeder();
    let cfg = GeneratorConfig::default();
    let (train, test) = generate_dataset(&topology, &cfg)?;

    println!("{:<6}{:>8}{:>8}", "type", "train", "test");
    for t in FaultType::ALL {
        println!(
            "{:<6}{:>8}{:>8}",
            t.name(),
            train.count_type(t),
            test.count_type(t)
        );
    }
    println!("{:<6}{:>8}{:>8}", "total", train.len(), test.len());

    let first = &train.samples[0];
    println!(
        "window shape {:?}, first label {:?}",
        first.x.shape(),
        first.label
    );
    train.save(format!("{out}/train.fgds"))?;
    test.save(format!("{out}/test.fgds"))?;
    println!("wrote {out}/train.fgds and {out}/test.fgds");
    Ok(())
}
