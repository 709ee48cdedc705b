//! Synthetic fault dataset: labeled 20-sample, three-phase voltage windows
//! over a feeder graph.

mod format;
mod generate;
mod waveform;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use format::{Dataset, DatasetManifest, FORMAT_VERSION};
pub use generate::{generate_dataset, DatasetPlan, Generator, GeneratorConfig, SampleMeta, Split};
pub use waveform::{waveform, WaveformConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The eleven shunt fault kinds, named by the involved phases (`G` = ground).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaultKind {
    Ag,
    Bg,
    Cg,
    Ab,
    Bc,
    Ca,
    Abg,
    Bcg,
    Cag,
    Abc,
    Abcg,
}

impl FaultKind {
    pub const ALL: [FaultKind; 11] = [
        FaultKind::Ag,
        FaultKind::Bg,
        FaultKind::Cg,
        FaultKind::Ab,
        FaultKind::Bc,
        FaultKind::Ca,
        FaultKind::Abg,
        FaultKind::Bcg,
        FaultKind::Cag,
        FaultKind::Abc,
        FaultKind::Abcg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FaultKind::Ag => "AG",
            FaultKind::Bg => "BG",
            FaultKind::Cg => "CG",
            FaultKind::Ab => "AB",
            FaultKind::Bc => "BC",
            FaultKind::Ca => "CA",
            FaultKind::Abg => "ABG",
            FaultKind::Bcg => "BCG",
            FaultKind::Cag => "CAG",
            FaultKind::Abc => "ABC",
            FaultKind::Abcg => "ABCG",
        }
    }

    /// Involved phases in `[A, B, C]` order.
    pub fn phases(self) -> [bool; 3] {
        let n = self.name();
        [n.contains('A'), n.contains('B'), n.contains('C')]
    }

    pub fn grounded(self) -> bool {
        self.name().ends_with('G')
    }

    pub fn fault_type(self) -> FaultType {
        match (
            self.phases().iter().filter(|&&p| p).count(),
            self.grounded(),
        ) {
            (1, _) => FaultType::Lg,
            (2, false) => FaultType::Ll,
            (2, true) => FaultType::Llg,
            (_, false) => FaultType::ThreeL,
            (_, true) => FaultType::ThreeLg,
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FaultKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        FaultKind::ALL
            .into_iter()
            .find(|k| k.name() == upper)
            .ok_or_else(|| Error::Validation(format!("unknown fault kind '{s}'")))
    }
}

impl Serialize for FaultKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for FaultKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The six classes predicted by the type head, in class-index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultType {
    #[serde(rename = "NF")]
    Nf,
    #[serde(rename = "LG")]
    Lg,
    #[serde(rename = "LL")]
    Ll,
    #[serde(rename = "LLG")]
    Llg,
    #[serde(rename = "3L")]
    ThreeL,
    #[serde(rename = "3LG")]
    ThreeLg,
}

impl FaultType {
    pub const ALL: [FaultType; 6] = [
        FaultType::Nf,
        FaultType::Lg,
        FaultType::Ll,
        FaultType::Llg,
        FaultType::ThreeL,
        FaultType::ThreeLg,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FaultType::Nf => "NF",
            FaultType::Lg => "LG",
            FaultType::Ll => "LL",
            FaultType::Llg => "LLG",
            FaultType::ThreeL => "3L",
            FaultType::ThreeLg => "3LG",
        }
    }

    /// Types whose phase pattern is not all-or-nothing.
    pub fn is_asymmetric(self) -> bool {
        matches!(self, FaultType::Lg | FaultType::Ll | FaultType::Llg)
    }
}

impl fmt::Display for FaultType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Resistances swept for every kind and bus, in ohms.
pub const RESISTANCES_OHM: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultConfig {
    pub kind: FaultKind,
    pub resistance_ohm: f64,
    /// 1-based bus number.
    pub location_bus: usize,
}

impl FaultConfig {
    pub fn new(kind: FaultKind, resistance_ohm: f64, location_bus: usize) -> Result<Self> {
        if !(resistance_ohm.is_finite() && resistance_ohm >= 0.0) {
            return Err(Error::Validation(format!(
                "fault resistance {resistance_ohm} Ω"
            )));
        }
        if location_bus == 0 {
            return Err(Error::Validation("buses are numbered from 1".into()));
        }
        Ok(FaultConfig {
            kind,
            resistance_ohm,
            location_bus,
        })
    }

    pub fn node(&self) -> usize {
        self.location_bus - 1
    }
}

/// Targets for all four tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Label {
    pub event: bool,
    pub fault_type: FaultType,
    /// Involved phases `[A, B, C]`.
    pub phase: [bool; 3],
    /// 0-based faulted node.
    pub location: Option<usize>,
}

impl Label {
    pub fn phase_mask(&self) -> u8 {
        self.phase
            .iter()
            .enumerate()
            .fold(0, |m, (i, &p)| m | ((p as u8) << i))
    }

    pub fn phase_vector(&self) -> [f64; 3] {
        self.phase.map(|p| p as u8 as f64)
    }

    pub fn location_one_hot(&self, n_nodes: usize) -> Vec<f64> {
        let mut v = vec![0.0; n_nodes];
        if let Some(l) = self.location {
            v[l] = 1.0;
        }
        v
    }

    /// The label invariants every stored sample satisfies.
    pub fn is_consistent(&self) -> bool {
        let bits = self.phase.iter().filter(|&&p| p).count();
        let shape_ok = match self.fault_type {
            FaultType::Nf => bits == 0,
            FaultType::Lg => bits == 1,
            FaultType::Ll | FaultType::Llg => bits == 2,
            FaultType::ThreeL | FaultType::ThreeLg => bits == 3,
        };
        let nf = self.fault_type == FaultType::Nf;
        shape_ok && (self.event != nf) && (self.location.is_none() == nf)
    }
}

pub fn label(fault: Option<&FaultConfig>) -> Label {
    match fault {
        None => Label {
            event: false,
            fault_type: FaultType::Nf,
            phase: [false; 3],
            location: None,
        },
        Some(f) => Label {
            event: true,
            fault_type: f.kind.fault_type(),
            phase: f.kind.phases(),
            location: Some(f.node()),
        },
    }
}

/// Label for a kind given as text, e.g. `"ABG"`.
pub fn label_kind(kind: &str, resistance_ohm: f64, location_bus: usize) -> Result<Label> {
    let f = FaultConfig::new(kind.parse()?, resistance_ohm, location_bus)?;
    Ok(label(Some(&f)))
}

/// One window `x: [N×3×K]` with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Tensor,
    pub label: Label,
    pub meta: SampleMeta,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_table() {
        assert_eq!(FaultKind::ALL.len(), 11);
        assert_eq!(FaultKind::Abg.fault_type(), FaultType::Llg);
        assert_eq!(FaultKind::Ca.phases(), [true, false, true]);
        assert_eq!(FaultKind::Abcg.fault_type(), FaultType::ThreeLg);
        assert_eq!(FaultKind::Abc.fault_type(), FaultType::ThreeL);
        assert_eq!(FaultKind::Cg.fault_type(), FaultType::Lg);
        assert_eq!("bcg".parse::<FaultKind>().unwrap(), FaultKind::Bcg);
        assert!(matches!(
            "AX".parse::<FaultKind>(),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn labels_by_construction() {
        let l = label_kind("ABG", 0.1, 5).unwrap();
        assert!(l.event);
        assert_eq!(l.fault_type, FaultType::Llg);
        assert_eq!(l.phase, [true, true, false]);
        assert_eq!(l.location_one_hot(13)[4], 1.0);
        assert_eq!(l.location_one_hot(13).iter().sum::<f64>(), 1.0);

        let n = label(None);
        assert!(!n.event && n.fault_type == FaultType::Nf && n.location.is_none());
        assert_eq!(n.phase_mask(), 0);

        let ca = label_kind("CA", 1.0, 13).unwrap();
        assert_eq!((ca.fault_type, ca.phase_mask()), (FaultType::Ll, 0b101));
        assert!(label_kind("Q", 1.0, 1).is_err());
    }

    #[test]
    fn every_kind_labels_consistently() {
        for kind in FaultKind::ALL {
            let l = label(Some(&FaultConfig::new(kind, 1.0, 3).unwrap()));
            assert!(l.is_consistent(), "{kind}");
        }
        assert!(label(None).is_consistent());
    }

    #[test]
    fn fault_type_serializes_by_name() {
        assert_eq!(
            serde_json::to_string(&FaultType::ThreeLg).unwrap(),
            "\"3LG\""
        );
        assert_eq!(FaultType::from_index(4), Some(FaultType::ThreeL));
        assert_eq!(FaultType::from_index(6), None);
    }
}
