use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::decode::{decode_event, decode_location, decode_phase};
use crate::datagen::FaultType;
use crate::error::{Error, Result};
use crate::model::{Model, Task};
use crate::tensor::{argmax, Tensor};

/// Event probabilities closer than this to 0.5 are flagged.
pub const LOW_CONFIDENCE_MARGIN: f64 = 0.25;

/// End-to-end diagnosis of one window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub event: bool,
    pub event_probability: f64,
    pub fault_type: FaultType,
    /// Softmax over the six type classes, in class-index order.
    pub type_distribution: Vec<f64>,
    /// Involved phases `[A, B, C]`, reported for LG, LL and LLG only.
    pub phase: Option<[bool; 3]>,
    pub phase_probabilities: Vec<f64>,
    /// 1-based faulted bus; absent when no fault is detected.
    pub location_bus: Option<usize>,
    pub location_scores: Option<Vec<f64>>,
    pub low_confidence: bool,
    pub notes: Vec<String>,
}

impl Diagnosis {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "event:    {} (p = {:.4})",
            if self.event { "fault" } else { "no fault" },
            self.event_probability
        );
        let _ = writeln!(
            s,
            "type:     {} (p = {:.4})",
            self.fault_type,
            self.type_distribution[self.fault_type.index()]
        );
        if let Some(p) = self.phase {
            let names: String = ['A', 'B', 'C']
                .iter()
                .zip(p)
                .filter(|(_, on)| *on)
                .map(|(c, _)| *c)
                .collect();
            let _ = writeln!(s, "phase:    {names}");
        }
        if let Some(b) = self.location_bus {
            let _ = writeln!(s, "location: bus {b}");
        }
        if self.low_confidence {
            let _ = writeln!(s, "LOW CONFIDENCE: {}", self.notes.join("; "));
        }
        s
    }
}

/// The four task models, sharing one topology and window length.
#[derive(Clone, Debug)]
pub struct Diagnoser {
    event: Model,
    fault_type: Model,
    phase: Model,
    location: Model,
}

impl Diagnoser {
    pub fn new(event: Model, fault_type: Model, phase: Model, location: Model) -> Result<Self> {
        let fp = event.topology().fingerprint();
        for (task, m) in [
            (Task::Event, &event),
            (Task::Type, &fault_type),
            (Task::Phase, &phase),
            (Task::Location, &location),
        ] {
            if !m.params.has_head(task) {
                return Err(Error::Compatibility(format!(
                    "{task} model lacks a {task} head"
                )));
            }
            if m.topology().fingerprint() != fp || m.spec().window != event.spec().window {
                return Err(Error::Compatibility(format!(
                    "{task} model was built for a different topology or window"
                )));
            }
        }
        Ok(Diagnoser {
            event,
            fault_type,
            phase,
            location,
        })
    }

    fn check_window(&self, x: &Tensor) -> Result<()> {
        let spec = self.event.spec();
        let want = [spec.n_nodes, spec.n_phases, spec.window];
        if x.shape() != want {
            return Err(Error::Validation(format!(
                "window shape {:?}, expected {want:?}",
                x.shape()
            )));
        }
        if x.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "window contains non-finite values".into(),
            ));
        }
        let row = spec.n_phases * spec.window;
        let topo = self.event.topology();
        for (b, chunk) in x.data().chunks(row).enumerate() {
            if !topo.is_measured(b) && chunk.iter().any(|&v| v != 0.0) {
                return Err(Error::Validation(format!(
                    "bus {} is not measured but its rows are nonzero",
                    b + 1
                )));
            }
        }
        Ok(())
    }

    /// Diagnoses a single window `x: [N×3×K]`.
    pub fn diagnose(&self, x: &Tensor) -> Result<Diagnosis> {
        self.check_window(x)?;
        let batch = x.clone().reshape({
            let mut s = vec![1];
            s.extend_from_slice(x.shape());
            s
        })?;
        let mut notes = Vec::new();
        if x.data().iter().all(|&v| v == 0.0) {
            notes.push("window carries no measurements".to_owned());
        }

        let p_event = self.event.predict(Task::Event, &batch)?.data()[0];
        let event = decode_event(p_event);
        if (p_event - 0.5).abs() < LOW_CONFIDENCE_MARGIN {
            notes.push(format!("event probability {p_event:.3} near threshold"));
        }

        let logits = self.fault_type.predict(Task::Type, &batch)?;
        let type_distribution = softmax(logits.data());
        let fault_type = if !event {
            FaultType::Nf
        } else {
            let t = FaultType::from_index(argmax(&type_distribution)).expect("six classes");
            if t == FaultType::Nf {
                notes.push("type head predicts NF although an event was detected".to_owned());
                let best = argmax(&type_distribution[1..]) + 1;
                FaultType::from_index(best).expect("six classes")
            } else {
                t
            }
        };

        let phase_probabilities = self.phase.predict(Task::Phase, &batch)?.into_data();
        let phase = decode_phase(&phase_probabilities, fault_type).map(|c| c.bits());

        let (location_bus, location_scores) = if event {
            let scores = self.location.predict(Task::Location, &batch)?.into_data();
            (Some(decode_location(&scores) + 1), Some(scores))
        } else {
            (None, None)
        };

        Ok(Diagnosis {
            event,
            event_probability: p_event,
            fault_type,
            type_distribution,
            phase,
            phase_probabilities,
            location_bus,
            location_scores,
            low_confidence: !notes.is_empty(),
            notes,
        })
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
