use crate::datagen::Label;
use crate::error::{Error, Result};
use crate::model::Task;
use crate::tensor::{Tape, Tensor, Var};

/// Rows of the batch that contribute to `task`'s loss.
pub fn loss_rows(task: Task, labels: &[Label]) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, l)| match task {
            Task::Event | Task::Type => true,
            Task::Phase => l.fault_type.is_asymmetric(),
            Task::Location => l.event,
        })
        .map(|(i, _)| i)
        .collect()
}

/// Scalar training loss for one batch, or `None` when masking leaves no
/// rows (the batch should be skipped).
///
/// Event: binary cross-entropy on the fault probability. Type: 6-class
/// cross-entropy. Phase: binary cross-entropy over the three phases of LG,
/// LL and LLG samples only. Location: per-node binary cross-entropy over
/// fault samples only.
pub fn loss_for(task: Task, tape: &mut Tape, output: Var, labels: &[Label]) -> Result<Option<Var>> {
    let shape = tape.shape(output).to_vec();
    if shape.first() != Some(&labels.len()) {
        return Err(Error::dim("loss_for", &shape, &[labels.len()]));
    }
    let rows = loss_rows(task, labels);
    if rows.is_empty() {
        return Ok(None);
    }
    let kept = if rows.len() == labels.len() {
        output
    } else {
        tape.select_rows(output, &rows)?
    };
    let loss = match task {
        Task::Event => {
            let t = rows.iter().map(|&i| labels[i].event as u8 as f64).collect();
            tape.binary_cross_entropy(kept, &Tensor::vector(t))?
        }
        Task::Type => {
            let t: Vec<usize> = rows.iter().map(|&i| labels[i].fault_type.index()).collect();
            tape.cross_entropy(kept, &t)?
        }
        Task::Phase => {
            let t = rows
                .iter()
                .flat_map(|&i| labels[i].phase_vector())
                .collect();
            tape.binary_cross_entropy(kept, &Tensor::new(vec![rows.len(), 3], t)?)?
        }
        Task::Location => {
            let n = shape[1];
            let t = rows
                .iter()
                .flat_map(|&i| labels[i].location_one_hot(n))
                .collect();
            tape.binary_cross_entropy(kept, &Tensor::new(vec![rows.len(), n], t)?)?
        }
    };
    Ok(Some(loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{label, label_kind};

    fn labels() -> Vec<Label> {
        vec![
            label_kind("AG", 1.0, 2).unwrap(),
            label(None),
            label_kind("ABC", 1.0, 3).unwrap(),
            label_kind("BCG", 1.0, 1).unwrap(),
        ]
    }

    #[test]
    fn uniform_type_logits_give_ln6() {
        let mut tape = Tape::new();
        let out = tape.constant(Tensor::zeros(vec![4, 6]));
        let l = loss_for(Task::Type, &mut tape, out, &labels())
            .unwrap()
            .unwrap();
        assert!((tape.value(l).item() - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_give_near_zero_loss() {
        let ls = labels();
        let mut tape = Tape::new();
        let ev = tape.constant(Tensor::vector(
            ls.iter().map(|l| l.event as u8 as f64).collect(),
        ));
        let loss = loss_for(Task::Event, &mut tape, ev, &ls).unwrap().unwrap();
        assert!(tape.value(loss).item() < 1e-10);

        let loc = Tensor::new(
            vec![4, 3],
            ls.iter().flat_map(|l| l.location_one_hot(3)).collect(),
        )
        .unwrap();
        let lv = tape.constant(loc);
        let loss = loss_for(Task::Location, &mut tape, lv, &ls)
            .unwrap()
            .unwrap();
        assert!(tape.value(loss).item() < 1e-10);
    }

    #[test]
    fn symmetric_only_batch_skips_phase_loss() {
        let ls = vec![
            label_kind("ABC", 1.0, 1).unwrap(),
            label_kind("ABCG", 0.1, 2).unwrap(),
        ];
        let mut tape = Tape::new();
        let out = tape.constant(Tensor::full(vec![2, 3], 0.3));
        assert!(loss_for(Task::Phase, &mut tape, out, &ls)
            .unwrap()
            .is_none());
        let nf = vec![label(None)];
        let out = tape.constant(Tensor::full(vec![1, 3], 0.3));
        assert!(loss_for(Task::Location, &mut tape, out, &nf)
            .unwrap()
            .is_none());
    }

    #[test]
    fn masked_samples_do_not_change_the_loss() {
        let ls = labels();
        let probs = Tensor::new(
            vec![4, 3],
            vec![0.7, 0.2, 0.1, 0.4, 0.4, 0.4, 0.9, 0.8, 0.3, 0.2, 0.6, 0.55],
        )
        .unwrap();
        let mut tape = Tape::new();
        let all = tape.constant(probs.clone());
        let full = loss_for(Task::Phase, &mut tape, all, &ls).unwrap().unwrap();

        let kept = Tensor::new(vec![2, 3], vec![0.7, 0.2, 0.1, 0.2, 0.6, 0.55]).unwrap();
        let only = tape.constant(kept);
        let reduced = loss_for(Task::Phase, &mut tape, only, &[ls[0], ls[3]])
            .unwrap()
            .unwrap();
        assert!((tape.value(full).item() - tape.value(reduced).item()).abs() < 1e-12);
    }
}
