//! Prints the normalized propagation matrix of the built-in feeder and
//! shows one propagation step smoothing a single-bus impulse.

use faultgraph::graph::{propagate, Topology};
use faultgraph::{Tape, Tensor};

fn main() -> faultgraph::Result<()> {
    let topology = Topology::default_feeder();
    let p = topology.propagation();
    let n = topology.n_nodes();
    println!(
        "measured buses: {:?}",
        topology
            .measured()
            .iter()
            .map(|b| b + 1)
            .collect::<Vec<_>>()
    );
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| format!("{:.3}", p.get(i, j))).collect();
        println!("{:>3} | {}", i + 1, row.join(" "));
    }

    // Unit impulse at bus 1; after one step it spreads to its neighbours.
    let mut h = vec![0.0; n];
    h[0] = 1.0;
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::new(vec![n, 1], h)?);
    let out = propagate(&mut tape, &p, v)?;
    let spread: Vec<String> = tape
        .value(out)
        .data()
        .iter()
        .map(|x| format!("{x:.3}"))
        .collect();
    println!("impulse at bus 1 after one step: {}", spread.join(" "));
    Ok(())
}
