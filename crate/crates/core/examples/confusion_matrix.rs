//! Builds a type confusion matrix from counts and prints per-class
//! accuracy, miss rate and precision, then the CSV form.

use faultgraph::eval::{pct, ConfusionMatrix};

fn main() -> faultgraph::Result<()> {
    let labels = ["NF", "LG", "LL", "LLG", "3L", "3LG"];
    let counts = vec![
        vec![140, 1, 0, 0, 0, 1],
        vec![2, 230, 3, 1, 0, 0],
        vec![0, 2, 229, 4, 1, 0],
        vec![0, 1, 5, 228, 0, 2],
        vec![0, 0, 1, 0, 40, 37],
        vec![0, 0, 0, 1, 35, 42],
    ];
    let m = ConfusionMatrix::from_counts(labels, counts)?;
    print!("{}", m.to_text());
    println!("overall accuracy {}", pct(m.accuracy()));

    // Symmetric classes only, as a submatrix.
    let sym = m.submatrix(&[4, 5]);
    println!("\n3L vs 3LG block, accuracy {}", pct(sym.accuracy()));
    print!("{}", sym.to_text());

    println!("\n{}", m.to_csv());
    Ok(())
}
