use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::FaultConfig;
use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::tensor::Tensor;

/// Phase angles of A, B, C.
pub const PHASE_ANGLES: [f64; 3] = [0.0, -2.0 * PI / 3.0, 2.0 * PI / 3.0];

/// Constants of the quasi-static sag model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformConfig {
    pub sample_rate_hz: f64,
    pub frequency_hz: f64,
    /// Samples per window `K`.
    pub window: usize,
    /// Source impedance `Z₀` in the sag depth `s = R / (R + Z₀)`.
    pub source_impedance_ohm: f64,
    /// Per-hop decay of the disturbance.
    pub decay: f64,
    /// Phase jump of a faulted phase at full depth, radians.
    pub phase_jump_rad: f64,
    /// Depression of healthy phases for grounded kinds at full depth.
    pub healthy_depression: f64,
    /// Amplitude of the common-mode (zero-sequence) component added to all
    /// phases for grounded kinds at full depth.
    pub zero_sequence: f64,
    pub load_scale_min: f64,
    pub load_scale_max: f64,
    /// Std-dev of additive Gaussian noise on measured channels, per unit.
    pub noise_std: f64,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        WaveformConfig {
            sample_rate_hz: 1000.0,
            frequency_hz: 60.0,
            window: 20,
            source_impedance_ohm: 5.0,
            decay: 0.7,
            phase_jump_rad: 0.2,
            healthy_depression: 0.05,
            zero_sequence: 0.0,
            load_scale_min: 0.95,
            load_scale_max: 1.05,
            noise_std: 0.0,
        }
    }
}

impl WaveformConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sample_rate_hz", self.sample_rate_hz),
            ("frequency_hz", self.frequency_hz),
            ("source_impedance_ohm", self.source_impedance_ohm),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Parameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.window == 0 {
            return Err(Error::Parameter("window must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.decay) {
            return Err(Error::Parameter(format!(
                "decay {} not in [0, 1]",
                self.decay
            )));
        }
        if !(self.load_scale_min > 0.0 && self.load_scale_min <= self.load_scale_max) {
            return Err(Error::Parameter(format!(
                "load scale range [{}, {}]",
                self.load_scale_min, self.load_scale_max
            )));
        }
        if !(self.noise_std >= 0.0 && self.zero_sequence >= 0.0 && self.healthy_depression >= 0.0) {
            return Err(Error::Parameter(
                "noise, zero-sequence and depression must be ≥ 0".into(),
            ));
        }
        Ok(())
    }

    /// Sag depth factor `s`: the retained fraction at the faulted bus.
    pub fn sag_depth(&self, resistance_ohm: f64) -> f64 {
        resistance_ohm / (resistance_ohm + self.source_impedance_ohm)
    }

    /// Electrical angle advanced over one sample.
    pub fn omega_per_sample(&self) -> f64 {
        2.0 * PI * self.frequency_hz / self.sample_rate_hz
    }
}

/// Noise-free voltages `[N×3×K]` at every bus, before zero-filling.
///
/// `hops[b]` is the hop distance from the faulted bus; it is ignored when
/// `fault` is `None`.
pub(crate) fn waveform_with_hops(
    n_nodes: usize,
    fault: Option<&FaultConfig>,
    hops: &[usize],
    load_scale: &[f64],
    t0: f64,
    cfg: &WaveformConfig,
) -> Tensor {
    let k = cfg.window;
    let w = cfg.omega_per_sample();
    let mut data = vec![0.0; n_nodes * 3 * k];
    for b in 0..n_nodes {
        let (mut m, mut delta) = ([load_scale[b]; 3], [0.0; 3]);
        let mut common = 0.0;
        let mut common_phase = 0.0;
        if let Some(f) = fault {
            let s = cfg.sag_depth(f.resistance_ohm);
            let reach = (1.0 - s) * cfg.decay.powi(hops[b] as i32);
            let phases = f.kind.phases();
            for p in 0..3 {
                if phases[p] {
                    m[p] *= 1.0 - reach;
                    delta[p] = -cfg.phase_jump_rad * reach;
                } else if f.kind.grounded() {
                    m[p] *= 1.0 - cfg.healthy_depression * reach;
                }
            }
            if f.kind.grounded() {
                common = cfg.zero_sequence * reach;
                common_phase = PHASE_ANGLES[phases.iter().position(|&p| p).unwrap_or(0)];
            }
        }
        for p in 0..3 {
            let row = &mut data[(b * 3 + p) * k..(b * 3 + p + 1) * k];
            for (t, v) in row.iter_mut().enumerate() {
                let theta = w * t as f64 + t0;
                *v = m[p] * (theta + PHASE_ANGLES[p] + delta[p]).sin();
                if common != 0.0 {
                    *v -= common * (theta + common_phase).sin();
                }
            }
        }
    }
    Tensor::new(vec![n_nodes, 3, k], data).expect("waveform shape")
}

/// Per-unit voltages `[N×3×K]` at every bus (no zero-fill, no noise).
pub fn waveform(
    topology: &Topology,
    fault: Option<&FaultConfig>,
    load_scale: &[f64],
    t0: f64,
    cfg: &WaveformConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    let n = topology.n_nodes();
    if load_scale.len() != n {
        return Err(Error::dim(
            "waveform load scales",
            &[load_scale.len()],
            &[n],
        ));
    }
    let hops = match fault {
        Some(f) => {
            if f.location_bus > n {
                return Err(Error::Validation(format!(
                    "fault bus {} outside 1..={n}",
                    f.location_bus
                )));
            }
            topology.hop_distances(f.node())?
        }
        None => vec![0; n],
    };
    Ok(waveform_with_hops(n, fault, &hops, load_scale, t0, cfg))
}
