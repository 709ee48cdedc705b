//! Turning head outputs into discrete predictions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::datagen::{FaultType, Label};
use crate::model::Task;
use crate::tensor::{argmax, Tensor};

/// Fault probability at or above this counts as a fault.
pub const EVENT_THRESHOLD: f64 = 0.5;

/// Phase classes scored for asymmetric faults.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PhaseClass {
    A,
    B,
    C,
    AB,
    BC,
    CA,
}

impl PhaseClass {
    pub const ALL: [PhaseClass; 6] = [
        PhaseClass::A,
        PhaseClass::B,
        PhaseClass::C,
        PhaseClass::AB,
        PhaseClass::BC,
        PhaseClass::CA,
    ];
    pub const SINGLE: [PhaseClass; 3] = [PhaseClass::A, PhaseClass::B, PhaseClass::C];
    pub const DOUBLE: [PhaseClass; 3] = [PhaseClass::AB, PhaseClass::BC, PhaseClass::CA];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PhaseClass::A => "A",
            PhaseClass::B => "B",
            PhaseClass::C => "C",
            PhaseClass::AB => "AB",
            PhaseClass::BC => "BC",
            PhaseClass::CA => "CA",
        }
    }

    pub fn bits(self) -> [bool; 3] {
        match self {
            PhaseClass::A => [true, false, false],
            PhaseClass::B => [false, true, false],
            PhaseClass::C => [false, false, true],
            PhaseClass::AB => [true, true, false],
            PhaseClass::BC => [false, true, true],
            PhaseClass::CA => [true, false, true],
        }
    }

    pub fn from_bits(bits: [bool; 3]) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.bits() == bits)
    }

    /// Candidate classes for a fault type; empty for symmetric types and NF.
    pub fn candidates(t: FaultType) -> &'static [PhaseClass] {
        match t {
            FaultType::Lg => &Self::SINGLE,
            FaultType::Ll | FaultType::Llg => &Self::DOUBLE,
            _ => &[],
        }
    }
}

impl fmt::Display for PhaseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn decode_event(probability: f64) -> bool {
    probability >= EVENT_THRESHOLD
}

pub fn decode_type(logits: &[f64]) -> FaultType {
    FaultType::from_index(argmax(logits)).expect("six type logits")
}

/// Thresholds the three phase probabilities and snaps the bits to the
/// Hamming-nearest class allowed for `fault_type` (ties → lowest class).
pub fn decode_phase(probabilities: &[f64], fault_type: FaultType) -> Option<PhaseClass> {
    let bits: Vec<bool> = probabilities.iter().map(|&p| p >= 0.5).collect();
    PhaseClass::candidates(fault_type)
        .iter()
        .copied()
        .min_by_key(|c| c.bits().iter().zip(&bits).filter(|(a, b)| a != b).count())
}

/// Index of the highest node score (ties → lowest index).
pub fn decode_location(scores: &[f64]) -> usize {
    argmax(scores)
}

/// True phase class of an asymmetric fault.
pub fn phase_class(label: &Label) -> Option<PhaseClass> {
    if label.fault_type.is_asymmetric() {
        PhaseClass::from_bits(label.phase)
    } else {
        None
    }
}

/// `(correct, scored)` for a batch of `task` head outputs. Phase is scored
/// on asymmetric samples using their true type; location on fault samples.
pub fn count_correct(task: Task, output: &Tensor, labels: &[Label]) -> (usize, usize) {
    let (mut correct, mut scored) = (0, 0);
    for (i, l) in labels.iter().enumerate() {
        let hit = match task {
            Task::Event => decode_event(output.data()[i]) == l.event,
            Task::Type => decode_type(output.row(i)) == l.fault_type,
            Task::Phase => match phase_class(l) {
                Some(c) => decode_phase(output.row(i), l.fault_type) == Some(c),
                None => continue,
            },
            Task::Location => match l.location {
                Some(n) => decode_location(output.row(i)) == n,
                None => continue,
            },
        };
        scored += 1;
        correct += hit as usize;
    }
    (correct, scored)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_snaps_to_nearest_allowed_class() {
        assert_eq!(
            decode_phase(&[0.9, 0.8, 0.7], FaultType::Lg),
            Some(PhaseClass::A)
        );
        assert_eq!(
            decode_phase(&[0.1, 0.2, 0.9], FaultType::Lg),
            Some(PhaseClass::C)
        );
        assert_eq!(
            decode_phase(&[0.1, 0.2, 0.3], FaultType::Ll),
            Some(PhaseClass::AB)
        );
        assert_eq!(
            decode_phase(&[0.1, 0.9, 0.9], FaultType::Llg),
            Some(PhaseClass::BC)
        );
        assert_eq!(
            decode_phase(&[0.9, 0.1, 0.9], FaultType::Ll),
            Some(PhaseClass::CA)
        );
        assert_eq!(decode_phase(&[0.9, 0.9, 0.9], FaultType::ThreeL), None);
    }

    #[test]
    fn other_decoders() {
        assert!(decode_event(0.5) && !decode_event(0.4999));
        assert_eq!(decode_type(&[0.0, 1.0, 3.0, 3.0, -1.0, 0.0]), FaultType::Ll);
        assert_eq!(decode_location(&[0.2, 0.7, 0.7]), 1);
        assert_eq!(
            PhaseClass::from_bits([true, false, true]),
            Some(PhaseClass::CA)
        );
    }
}
