//! Independent oracles shared by the integration tests and the acceptance
//! runner: central finite differences, dense recomputation of the
//! propagation matrix, and a triple-loop matmul.

#![allow(dead_code)]

use faultgraph::datagen::{Dataset, Generator, GeneratorConfig, Label};
use faultgraph::graph::Topology;
use faultgraph::model::{ArchKind, ArchitectureSpec, Model, ModelParams, Task};
use faultgraph::train::loss_for;
use faultgraph::{Mode, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Step for central differences. Truncation error is O(h²) and roundoff
/// O(ε/h), both far below the checked tolerance at this size.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this in magnitude are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

pub fn central_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

/// Fixed, non-symmetric weights so that reducing an output to a scalar
/// does not hide errors that cancel under a plain sum.
pub fn probe_weights(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| 0.5 + ((i as f64) * 0.77).sin()).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn reduce(tape: &mut Tape, y: Var) -> Result<Var> {
    if tape.value(y).numel() == 1 && tape.shape(y).is_empty() {
        return Ok(y);
    }
    let w = tape.constant(probe_weights(tape.shape(y)));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of `f` with respect to every element of every input.
pub fn check_op(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_grad()))
        .collect();
    let y = f(&mut tape, &vars).unwrap();
    let loss = reduce(&mut tape, y).unwrap();
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let eval = |inputs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let y = f(&mut tape, &vars).unwrap();
        let loss = reduce(&mut tape, y).unwrap();
        tape.value(loss).item()
    };
    let mut worst = 0.0_f64;
    for k in 0..inputs.len() {
        for i in 0..inputs[k].numel() {
            let numeric = central_diff(
                |v| {
                    let mut moved = inputs.to_vec();
                    moved[k].data_mut()[i] = v;
                    eval(&moved)
                },
                inputs[k].data()[i],
            );
            worst = worst.max(rel_err(analytic[k][i], numeric));
        }
    }
    worst
}

/// Uniform values in `[lo, hi)`.
pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Uniform values bounded away from zero, so ReLU-like kinks sit at least
/// `gap` away from every input.
pub fn away_from_zero(shape: &[usize], gap: f64, rng: &mut impl Rng) -> Tensor {
    let mut t = random_tensor(shape, -1.0, 1.0, rng);
    for v in t.data_mut() {
        *v = v.signum() * (gap + v.abs());
    }
    t
}

/// Mean loss of `task` on one batch, with dropout masks drawn from a fixed
/// seed so every evaluation sees the same mask.
pub fn model_loss(
    params: &ModelParams,
    topology: &Topology,
    task: Task,
    x: &Tensor,
    labels: &[Label],
    mode: Mode,
) -> f64 {
    let model = Model::new(params.clone(), topology.clone()).unwrap();
    let mut tape = Tape::new();
    let bound = model.params.bind_constant(&mut tape);
    let xv = tape.constant(x.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let out = model
        .forward(&mut tape, &bound, task, xv, mode, &mut rng)
        .unwrap();
    let loss = loss_for(task, &mut tape, out, labels).unwrap().unwrap();
    tape.value(loss).item()
}

/// Largest relative error over up to `per_param` coordinates of every
/// parameter tensor of `params` (all coordinates when the tensor is small).
pub fn check_model(
    params: &ModelParams,
    topology: &Topology,
    task: Task,
    x: &Tensor,
    labels: &[Label],
    mode: Mode,
    per_param: usize,
) -> (f64, usize) {
    let model = Model::new(params.clone(), topology.clone()).unwrap();
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let out = model
        .forward(&mut tape, &bound, task, xv, mode, &mut rng)
        .unwrap();
    let loss = loss_for(task, &mut tape, out, labels).unwrap().unwrap();
    tape.backward(loss).unwrap();

    let mut pick = ChaCha8Rng::seed_from_u64(5);
    let (mut worst, mut checked) = (0.0_f64, 0);
    for p in params.iter() {
        // Heads the task never reaches have an exact zero gradient.
        let n = p.value.numel();
        let grad = tape
            .grad(bound.get(&p.id).unwrap())
            .map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
        let coords: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            (0..per_param).map(|_| pick.random_range(0..n)).collect()
        };
        for i in coords {
            let numeric = central_diff(
                |v| {
                    let mut moved = params.clone();
                    moved.get_mut(&p.id).unwrap().data_mut()[i] = v;
                    model_loss(&moved, topology, task, x, labels, mode)
                },
                p.value.data()[i],
            );
            worst = worst.max(rel_err(grad[i], numeric));
            checked += 1;
        }
    }
    (worst, checked)
}

/// The small spec used for end-to-end gradient checks: 3 buses, 8 samples.
pub fn tiny_spec(kind: ArchKind) -> ArchitectureSpec {
    ArchitectureSpec::new(kind, 3, 8)
}

/// A path graph 0 – 1 – 2 with every bus measured.
pub fn tiny_topology() -> Topology {
    Topology::new(3, [(0, 1), (1, 2)], [0, 1, 2]).unwrap()
}

/// Row-major `[m×k]·[k×n]` by the textbook triple loop.
pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[l * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// `D̃^(−1/2) Ã D̃^(−1/2)` assembled from explicit dense factors.
pub fn naive_normalize(n: usize, edges: &[(usize, usize)]) -> Vec<f64> {
    let mut a_tilde = vec![0.0; n * n];
    for i in 0..n {
        a_tilde[i * n + i] = 1.0;
    }
    for &(u, v) in edges {
        a_tilde[u * n + v] = 1.0;
        a_tilde[v * n + u] = 1.0;
    }
    let mut d_inv_sqrt = vec![0.0; n * n];
    for i in 0..n {
        let deg: f64 = a_tilde[i * n..(i + 1) * n].iter().sum();
        d_inv_sqrt[i * n + i] = 1.0 / deg.sqrt();
    }
    let left = naive_matmul(&d_inv_sqrt, &a_tilde, n, n, n);
    naive_matmul(&left, &d_inv_sqrt, n, n, n)
}

/// Random simple graph: each unordered pair is an edge with probability `p`.
pub fn random_edges(n: usize, p: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    edges
}

/// Random connected graph: a random spanning tree plus extra edges.
pub fn random_connected_edges(n: usize, extra: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
    for (u, v) in random_edges(n, extra, rng) {
        if !edges.contains(&(u, v)) {
            edges.push((u, v));
        }
    }
    edges
}

/// A small, fully materialized train split: one load scenario per fault
/// configuration plus `nonfault` load-change windows.
pub fn small_train(seed: u64, nonfault: usize) -> Dataset {
    let cfg = GeneratorConfig {
        n_load_scenarios: 1,
        n_nonfault: nonfault,
        seed,
        ..GeneratorConfig::default()
    };
    let g = Generator::new(&Topology::default_feeder(), cfg).unwrap();
    let (train, _) = g.plan_split();
    g.materialize(&train).unwrap()
}

/// Published type confusion counts, rows true class, with the printed
/// per-class accuracy and precision in percent.
pub const TYPE_LABELS: [&str; 6] = ["3L", "3LG", "LG", "LL", "LLG", "NF"];
pub const TYPE_COUNTS: [[u64; 6]; 6] = [
    [763, 5, 2, 3, 4, 3],
    [3, 764, 4, 4, 3, 2],
    [6, 6, 2304, 9, 7, 8],
    [5, 6, 8, 2304, 8, 9],
    [6, 7, 8, 8, 2305, 6],
    [3, 2, 5, 6, 3, 1401],
];
pub const TYPE_ACCURACY: [&str; 6] = ["97.8%", "97.9%", "98.5%", "98.5%", "98.5%", "98.7%"];
pub const TYPE_MISS: [&str; 6] = ["2.2%", "2.1%", "1.5%", "1.5%", "1.5%", "1.3%"];
pub const TYPE_PRECISION: [&str; 6] = ["97.1%", "96.7%", "98.8%", "98.7%", "98.9%", "98.0%"];

pub const SINGLE_LABELS: [&str; 3] = ["A", "B", "C"];
pub const SINGLE_COUNTS: [[u64; 3]; 3] = [[775, 3, 2], [5, 772, 3], [2, 4, 774]];
pub const SINGLE_ACCURACY: [&str; 3] = ["99.4%", "99.0%", "99.2%"];
pub const SINGLE_PRECISION: [&str; 3] = ["99.1%", "99.1%", "99.4%"];

pub const DOUBLE_LABELS: [&str; 3] = ["AB", "BC", "CA"];
pub const DOUBLE_COUNTS: [[u64; 3]; 3] = [[1547, 7, 6], [8, 1546, 6], [5, 7, 1548]];
pub const DOUBLE_ACCURACY: [&str; 3] = ["99.2%", "99.1%", "99.2%"];
pub const DOUBLE_PRECISION: [&str; 3] = ["99.2%", "99.1%", "99.2%"];

/// Mismatches between a count matrix's derived percentages and printed ones.
pub fn printed_mismatches<const N: usize>(
    labels: [&str; N],
    counts: [[u64; N]; N],
    accuracy: [&str; N],
    miss: Option<[&str; N]>,
    precision: [&str; N],
) -> Vec<String> {
    use faultgraph::eval::{pct, ConfusionMatrix};
    let m = ConfusionMatrix::from_counts(labels, counts.iter().map(|r| r.to_vec()).collect())
        .expect("square counts");
    let mut bad = Vec::new();
    for i in 0..N {
        let mut check = |what: &str, got: String, want: &str| {
            if got != want {
                bad.push(format!("{} {what}: {got} != {want}", labels[i]));
            }
        };
        check("accuracy", pct(m.class_accuracy(i)), accuracy[i]);
        check("precision", pct(m.precision(i)), precision[i]);
        if let Some(miss) = miss {
            check("miss", pct(m.class_miss(i)), miss[i]);
        }
    }
    bad
}

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Worst finite-difference error for every differentiable op, by name.
pub fn op_suite() -> Vec<(String, f64)> {
    use faultgraph::graph::{global_mean_pool, propagate, Topology};
    use faultgraph::Mode;
    let mut out: Vec<(String, f64)> = Vec::new();
    let mut push = |name: &str, err: f64| out.push((name.to_owned(), err));
    let mut r = seeded(1);

    let a = random_tensor(&[3, 4], -1.0, 1.0, &mut r);
    let b = random_tensor(&[4, 2], -1.0, 1.0, &mut r);
    push(
        "matmul",
        check_op(&[a.clone(), b], |t, v| t.matmul(v[0], v[1])),
    );
    let x = random_tensor(&[2, 4, 5], -1.0, 1.0, &mut r);
    push(
        "left_matmul",
        check_op(&[a, x], |t, v| t.left_matmul(v[0], v[1])),
    );

    let a = random_tensor(&[2, 3], -2.0, 2.0, &mut r);
    let b = random_tensor(&[2, 3], -2.0, 2.0, &mut r);
    push(
        "add",
        check_op(&[a.clone(), b.clone()], |t, v| t.add(v[0], v[1])),
    );
    push("mul", check_op(&[a.clone(), b], |t, v| t.mul(v[0], v[1])));
    push(
        "scale",
        check_op(std::slice::from_ref(&a), |t, v| Ok(t.scale(v[0], -2.5))),
    );
    push(
        "sigmoid",
        check_op(std::slice::from_ref(&a), |t, v| Ok(t.sigmoid(v[0]))),
    );
    let bias = random_tensor(&[3], -1.0, 1.0, &mut r);
    push(
        "add_bias",
        check_op(&[a, bias], |t, v| t.add_bias(v[0], v[1])),
    );

    // The kink at zero has no derivative; sample away from it.
    let x = away_from_zero(&[4, 5], 0.05, &mut r);
    push("relu", check_op(&[x], |t, v| Ok(t.relu(v[0]))));

    let x = random_tensor(&[3, 4], -3.0, 3.0, &mut r);
    for axis in 0..2 {
        push(
            &format!("softmax axis {axis}"),
            check_op(std::slice::from_ref(&x), |t, v| t.softmax(v[0], axis)),
        );
    }

    let x = random_tensor(&[2, 3, 4], -1.0, 1.0, &mut r);
    for axis in 0..3 {
        push(
            &format!("mean_axis {axis}"),
            check_op(std::slice::from_ref(&x), |t, v| t.mean_axis(v[0], axis)),
        );
    }
    push(
        "sum",
        check_op(std::slice::from_ref(&x), |t, v| Ok(t.sum(v[0]))),
    );
    push(
        "mean",
        check_op(std::slice::from_ref(&x), |t, v| Ok(t.mean(v[0]))),
    );
    push(
        "reshape",
        check_op(&[x], |t, v| t.reshape(v[0], vec![6, 4])),
    );
    let rows = random_tensor(&[5, 3], -1.0, 1.0, &mut r);
    push(
        "select_rows",
        check_op(&[rows], |t, v| t.select_rows(v[0], &[4, 0, 4, 2])),
    );

    let k = random_tensor(&[3, 3, 4], -1.0, 1.0, &mut r);
    let b = random_tensor(&[3], -1.0, 1.0, &mut r);
    let x = random_tensor(&[3, 12], -1.0, 1.0, &mut r);
    push(
        "conv1d",
        check_op(&[x, k.clone(), b.clone()], |t, v| {
            t.conv1d_valid(v[0], v[1], v[2], 4)
        }),
    );
    let xb = random_tensor(&[2, 3, 11], -1.0, 1.0, &mut r);
    push(
        "conv1d batched",
        check_op(&[xb, k, b], |t, v| t.conv1d_valid(v[0], v[1], v[2], 3)),
    );

    let x = random_tensor(&[4, 6], -1.0, 1.0, &mut r);
    push(
        "dropout",
        check_op(&[x], |t, v| {
            t.dropout(v[0], 0.3, Mode::Train, &mut seeded(11))
        }),
    );

    let logits = random_tensor(&[4, 6], -2.0, 2.0, &mut r);
    push(
        "cross_entropy",
        check_op(&[logits], |t, v| t.cross_entropy(v[0], &[0, 5, 2, 2])),
    );
    let z = random_tensor(&[4, 3], -2.0, 2.0, &mut r);
    let targets = Tensor::new(
        vec![4, 3],
        vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
    )
    .unwrap();
    push(
        "binary_cross_entropy",
        check_op(&[z], |t, v| {
            let p = t.sigmoid(v[0]);
            t.binary_cross_entropy(p, &targets)
        }),
    );

    let p = Topology::ring(5).unwrap().propagation();
    let h = random_tensor(&[5, 3], -1.0, 1.0, &mut r);
    push("propagate", check_op(&[h], |t, v| propagate(t, &p, v[0])));
    let hb = random_tensor(&[2, 5, 3], -1.0, 1.0, &mut r);
    push(
        "propagate batched",
        check_op(std::slice::from_ref(&hb), |t, v| propagate(t, &p, v[0])),
    );
    push(
        "global_mean_pool",
        check_op(&[hb], |t, v| global_mean_pool(t, v[0])),
    );
    out
}

/// Worst error over both tiny architectures, every head, both modes.
pub fn architecture_suite(per_param: usize) -> Vec<(String, f64)> {
    use faultgraph::datagen::label_kind;
    use faultgraph::model::{init_params, ArchKind, Task};
    use faultgraph::Mode;
    let x = random_tensor(&[4, 3, 3, 8], -1.0, 1.0, &mut seeded(20));
    let labels = vec![
        label_kind("AG", 1.0, 1).unwrap(),
        label_kind("BCG", 0.1, 3).unwrap(),
        label_kind("CA", 10.0, 2).unwrap(),
        label_kind("ABCG", 1.0, 2).unwrap(),
    ];
    let topo = tiny_topology();
    let mut out = Vec::new();
    for kind in [ArchKind::Cgcn, ArchKind::Ann] {
        let params = init_params(&tiny_spec(kind), &mut seeded(21)).unwrap();
        for task in Task::ALL {
            for mode in [Mode::Eval, Mode::Train] {
                let (err, checked) =
                    check_model(&params, &topo, task, &x, &labels, mode, per_param);
                let err = if checked == 0 { f64::INFINITY } else { err };
                out.push((format!("{kind} {task} {mode:?}"), err));
            }
        }
    }
    out
}

/// Largest gap between `normalize` and the dense oracle on one random graph.
pub fn normalize_violation(seed: u64) -> f64 {
    use faultgraph::graph::{normalize, Topology};
    let mut rng = seeded(seed);
    let n = rng.random_range(1..=20);
    let p = rng.random_range(0.0..1.0);
    let edges = random_edges(n, p, &mut rng);
    let topo = Topology::new(n, edges.iter().copied(), []).unwrap();
    let fast = normalize(&topo.adjacency()).unwrap();
    let slow = naive_normalize(n, &edges);
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((fast.get(i, j) - slow[i * n + j]).abs());
        }
    }
    worst
}

/// Builds a random (graph, window, permutation) triple and returns the
/// largest invariance and equivariance violations over all heads.
pub fn equivariance_violation(seed: u64) -> (f64, f64) {
    use faultgraph::graph::{permute, Permutation, Topology};
    use faultgraph::model::{init_params, ArchKind, ArchitectureSpec, Model, Task};
    let batch = |x: &Tensor| {
        let mut shape = vec![1];
        shape.extend_from_slice(x.shape());
        x.clone().reshape(shape).unwrap()
    };
    let mut rng = seeded(seed);
    let n = rng.random_range(2..=14);
    let edges = random_connected_edges(n, 0.2, &mut rng);
    let topo = Topology::new(n, edges, 0..n).unwrap();
    let spec = ArchitectureSpec::new(ArchKind::Cgcn, n, 20);
    let params = init_params(&spec, &mut rng).unwrap();
    let x = random_tensor(&[n, 3, 20], -1.2, 1.2, &mut rng);
    let perm = Permutation::random(n, &mut rng);

    let (topo_p, x_p) = permute(&topo, &x, &perm).unwrap();
    let m = Model::new(params.clone(), topo).unwrap();
    let m_p = Model::new(params, topo_p).unwrap();
    let (xb, xb_p) = (batch(&x), batch(&x_p));

    let mut invariance = 0.0_f64;
    for task in [Task::Event, Task::Type, Task::Phase] {
        let a = m.predict(task, &xb).unwrap();
        let b = m_p.predict(task, &xb_p).unwrap();
        invariance = invariance.max(a.max_abs_diff(&b));
    }
    let loc = m.predict(Task::Location, &xb).unwrap();
    let loc_p = m_p.predict(Task::Location, &xb_p).unwrap();
    let mut equivariance = 0.0_f64;
    for i in 0..n {
        equivariance = equivariance.max((loc.data()[i] - loc_p.data()[perm.get(i)]).abs());
    }
    let h = m.embed(&xb).unwrap();
    let h_p = m_p.embed(&xb_p).unwrap();
    let f = h.shape()[2];
    for i in 0..n {
        for c in 0..f {
            let d = h.data()[i * f + c] - h_p.data()[perm.get(i) * f + c];
            equivariance = equivariance.max(d.abs());
        }
    }
    (invariance, equivariance)
}
