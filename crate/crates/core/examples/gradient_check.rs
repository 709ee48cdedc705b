//! Compares tape gradients with central finite differences for a small
//! sigmoid-matmul-cross-entropy graph.

use faultgraph::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(x: &Tensor, w: &Tensor, targets: &[usize]) -> faultgraph::Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.leaf(w.clone().with_grad());
    let z = tape.matmul(xv, wv)?;
    let z = tape.sigmoid(z);
    let l = tape.cross_entropy(z, targets)?;
    tape.backward(l)?;
    Ok((
        tape.value(l).item(),
        tape.grad(wv).expect("leaf grad").to_vec(),
    ))
}

fn main() -> faultgraph::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut sample = |shape: Vec<usize>| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    };
    let x = sample(vec![5, 4])?;
    let w = sample(vec![4, 3])?;
    let targets = [0, 2, 1, 1, 0];

    let (_, analytic) = loss(&x, &w, &targets)?;
    let h = 1e-5;
    let mut worst = 0.0_f64;
    for i in 0..w.numel() {
        let mut plus = w.clone();
        plus.data_mut()[i] += h;
        let mut minus = w.clone();
        minus.data_mut()[i] -= h;
        let numeric = (loss(&x, &plus, &targets)?.0 - loss(&x, &minus, &targets)?.0) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
        println!(
            "w[{i:>2}] analytic {:+.8} numeric {numeric:+.8} rel {rel:.1e}",
            analytic[i]
        );
        worst = worst.max(rel);
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}
