use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::confusion::ConfusionMatrix;
use super::decode::{
    decode_event, decode_location, decode_phase, decode_type, phase_class, PhaseClass,
};
use crate::datagen::{Dataset, FaultType, Split};
use crate::error::{Error, Result};
use crate::model::{ArchKind, Model, Task};

const EVAL_BATCH: usize = 256;

/// What a report was computed on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetId {
    pub split: Split,
    pub topology_fingerprint: String,
    pub seed: u64,
    pub n_samples: usize,
}

impl DatasetId {
    pub fn of(data: &Dataset) -> Self {
        DatasetId {
            split: data.manifest.split,
            topology_fingerprint: data.manifest.topology_fingerprint.clone(),
            seed: data.manifest.seed,
            n_samples: data.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub task: Task,
    pub matrix: ConfusionMatrix,
    pub accuracy: f64,
}

impl Evaluation {
    /// Number of samples the task was scored on.
    pub fn scored(&self) -> u64 {
        self.matrix.total()
    }
}

fn class_labels(task: Task, model: &Model) -> Vec<String> {
    match task {
        Task::Event => vec!["no-fault".into(), "fault".into()],
        Task::Type => FaultType::ALL.iter().map(|t| t.name().to_owned()).collect(),
        Task::Phase => PhaseClass::ALL
            .iter()
            .map(|c| c.name().to_owned())
            .collect(),
        Task::Location => (0..model.topology().n_nodes())
            .map(|b| model.topology().name(b))
            .collect(),
    }
}

/// Fails unless `model` and `data` share topology, node count and window.
pub fn check_compatible(model: &Model, data: &Dataset) -> Result<()> {
    data.check_topology(model.topology())?;
    let spec = model.spec();
    if data.manifest.n_nodes != spec.n_nodes || data.manifest.window != spec.window {
        return Err(Error::Compatibility(format!(
            "dataset windows are {}×3×{}, model expects {}×3×{}",
            data.manifest.n_nodes, data.manifest.window, spec.n_nodes, spec.window
        )));
    }
    Ok(())
}

/// Eval-mode confusion matrix and accuracy of `model`'s `task` head.
///
/// Event and type are scored on every sample; phase on LG/LL/LLG samples,
/// decoded against the true type; location on fault samples.
pub fn evaluate(model: &Model, data: &Dataset, task: Task) -> Result<Evaluation> {
    check_compatible(model, data)?;
    let mut matrix = ConfusionMatrix::new(class_labels(task, model));
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let out = model.predict(task, &data.batch_x(chunk))?;
        for (row, &i) in chunk.iter().enumerate() {
            let l = &data.samples[i].label;
            let (truth, pred) = match task {
                Task::Event => (l.event as usize, decode_event(out.data()[row]) as usize),
                Task::Type => (l.fault_type.index(), decode_type(out.row(row)).index()),
                Task::Phase => match phase_class(l) {
                    Some(c) => {
                        let p = decode_phase(out.row(row), l.fault_type).expect("asymmetric type");
                        (c.index(), p.index())
                    }
                    None => continue,
                },
                Task::Location => match l.location {
                    Some(n) => (n, decode_location(out.row(row))),
                    None => continue,
                },
            };
            matrix.add(truth, pred);
        }
    }
    let accuracy = matrix.accuracy().unwrap_or(0.0);
    Ok(Evaluation {
        task,
        matrix,
        accuracy,
    })
}

/// Per-task evaluations of one architecture on one dataset split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub arch: ArchKind,
    pub dataset: DatasetId,
    pub evaluations: Vec<Evaluation>,
}

impl Report {
    pub fn new(arch: ArchKind, data: &Dataset) -> Self {
        Report {
            arch,
            dataset: DatasetId::of(data),
            evaluations: Vec::new(),
        }
    }

    pub fn push(&mut self, e: Evaluation) {
        self.evaluations.retain(|x| x.task != e.task);
        self.evaluations.push(e);
    }

    pub fn get(&self, task: Task) -> Option<&Evaluation> {
        self.evaluations.iter().find(|e| e.task == task)
    }

    pub fn tasks(&self) -> Vec<Task> {
        Task::ALL
            .into_iter()
            .filter(|&t| self.get(t).is_some())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(0, format!("bad report: {e}")))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} on {} split ({} samples)\n",
            self.arch, self.dataset.split, self.dataset.n_samples
        );
        for t in self.tasks() {
            let e = self.get(t).unwrap();
            let _ = writeln!(
                s,
                "\n{t}: accuracy {:.2}% over {} samples",
                100.0 * e.accuracy,
                e.scored()
            );
            let m = if t == Task::Phase {
                split_phase(&e.matrix)
            } else {
                vec![e.matrix.clone()]
            };
            for m in m {
                s.push_str(&m.to_text());
            }
        }
        s
    }
}

/// The single-phase and two-phase blocks of a 6-class phase matrix.
pub fn split_phase(m: &ConfusionMatrix) -> Vec<ConfusionMatrix> {
    vec![m.submatrix(&[0, 1, 2]), m.submatrix(&[3, 4, 5])]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub task: Task,
    pub a: f64,
    pub b: f64,
    /// `b − a`.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: ArchKind,
    pub b: ArchKind,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<10}{:>10}{:>10}{:>10}\n",
            "task",
            self.a.to_string(),
            self.b.to_string(),
            "delta"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10}{:>9.2}%{:>9.2}%{:>+9.2}%",
                r.task.name(),
                100.0 * r.a,
                100.0 * r.b,
                100.0 * r.delta
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("task,{},{},delta\n", self.a, self.b);
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{:.6},{:.6}", r.task.name(), r.a, r.b, r.delta);
        }
        s
    }
}

/// Side-by-side accuracies in canonical task order.
pub fn compare(a: &Report, b: &Report) -> Result<Comparison> {
    if a.dataset != b.dataset {
        return Err(Error::Validation(format!(
            "reports cover different data: {:?} vs {:?}",
            a.dataset, b.dataset
        )));
    }
    if a.tasks() != b.tasks() {
        return Err(Error::Validation(format!(
            "reports cover different tasks: {:?} vs {:?}",
            a.tasks(),
            b.tasks()
        )));
    }
    let rows = a
        .tasks()
        .into_iter()
        .map(|t| {
            let (x, y) = (a.get(t).unwrap().accuracy, b.get(t).unwrap().accuracy);
            ComparisonRow {
                task: t,
                a: x,
                b: y,
                delta: y - x,
            }
        })
        .collect();
    Ok(Comparison {
        a: a.arch,
        b: b.arch,
        rows,
    })
}
