use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::format::{self, Dataset, DatasetManifest};
use super::waveform::{waveform_with_hops, WaveformConfig};
use super::{label, FaultConfig, FaultKind, Sample, RESISTANCES_OHM};
use crate::error::{Error, Result};
use crate::graph::Topology;

/// Stream id reserved for the train/test shuffle.
const SPLIT_STREAM: u64 = u64::MAX;
const NOISE_KEY: u64 = 0x6e6f_6973_655f_6b65;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Load scenarios per (kind, resistance, bus) fault configuration.
    pub n_load_scenarios: usize,
    /// Load-change-only runs.
    pub n_nonfault: usize,
    pub seed: u64,
    /// Consecutive windows cut from each simulated run.
    pub windows_per_run: usize,
    pub fault_test_fraction: f64,
    pub nonfault_test_fraction: f64,
    pub waveform: WaveformConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_load_scenarios: 10,
            n_nonfault: 600,
            seed: 0,
            windows_per_run: 1,
            fault_test_fraction: 2.0 / 15.0,
            nonfault_test_fraction: 0.142,
            waveform: WaveformConfig::default(),
        }
    }
}

impl GeneratorConfig {
    /// 150 scenarios and 10,000 load-change runs.
    pub fn full_scale(seed: u64) -> Self {
        GeneratorConfig {
            n_load_scenarios: 150,
            n_nonfault: 10_000,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_load_scenarios < 1 {
            return Err(Error::Parameter("need at least one load scenario".into()));
        }
        if self.windows_per_run < 1 {
            return Err(Error::Parameter(
                "windows_per_run must be at least 1".into(),
            ));
        }
        for f in [self.fault_test_fraction, self.nonfault_test_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Parameter(format!("test fraction {f} not in [0, 1]")));
            }
        }
        self.waveform.validate()
    }
}

/// Provenance of one sample; enough to regenerate it exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    /// Global sample index; also the noise stream id.
    pub index: u64,
    /// Simulated run the window was cut from; also the run's rng stream id.
    pub run: u64,
    pub window: u32,
    pub scenario: u32,
    pub fault: Option<FaultConfig>,
}

/// The samples of one split, not yet materialized.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetPlan {
    pub split: Split,
    pub samples: Vec<SampleMeta>,
}

impl DatasetPlan {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_fault(&self) -> usize {
        self.samples.iter().filter(|s| s.fault.is_some()).count()
    }

    pub fn n_nonfault(&self) -> usize {
        self.len() - self.n_fault()
    }
}

/// Deterministic sample factory for one topology and configuration.
#[derive(Clone, Debug)]
pub struct Generator {
    topology: Topology,
    config: GeneratorConfig,
    hops: Vec<Vec<usize>>,
}

impl Generator {
    pub fn new(topology: &Topology, config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let hops = (0..topology.n_nodes())
            .map(|b| topology.hop_distances(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(Generator {
            topology: topology.clone(),
            config,
            hops,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Every run in canonical order: faults by kind, resistance, bus and
    /// scenario, then load-change runs.
    fn runs(&self) -> Vec<(u32, Option<FaultConfig>)> {
        let n = self.topology.n_nodes();
        let l = self.config.n_load_scenarios as u32;
        let mut runs = Vec::new();
        for kind in FaultKind::ALL {
            for r in RESISTANCES_OHM {
                for bus in 1..=n {
                    let f = FaultConfig {
                        kind,
                        resistance_ohm: r,
                        location_bus: bus,
                    };
                    runs.extend((0..l).map(|s| (s, Some(f))));
                }
            }
        }
        runs.extend((0..self.config.n_nonfault as u32).map(|s| (s, None)));
        runs
    }

    fn expand(&self, run: u64, scenario: u32, fault: Option<FaultConfig>) -> Vec<SampleMeta> {
        let w = self.config.windows_per_run as u64;
        (0..w)
            .map(|j| SampleMeta {
                index: run * w + j,
                run,
                window: j as u32,
                scenario,
                fault,
            })
            .collect()
    }

    /// All samples, in global index order.
    pub fn plan_all(&self) -> Vec<SampleMeta> {
        self.runs()
            .into_iter()
            .enumerate()
            .flat_map(|(i, (s, f))| self.expand(i as u64, s, f))
            .collect()
    }

    /// Stratified split: runs of each fault kind, and the load-change runs,
    /// are shuffled with a seeded rng and the first `round(n·fraction)` go
    /// to test. Windows of one run always share a split.
    pub fn plan_split(&self) -> (DatasetPlan, DatasetPlan) {
        let runs = self.runs();
        let mut strata: Vec<Vec<usize>> = vec![Vec::new(); FaultKind::ALL.len() + 1];
        for (i, (_, f)) in runs.iter().enumerate() {
            let s = match f {
                Some(f) => FaultKind::ALL.iter().position(|&k| k == f.kind).unwrap(),
                None => FaultKind::ALL.len(),
            };
            strata[s].push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(SPLIT_STREAM);
        let mut is_test = vec![false; runs.len()];
        for (s, members) in strata.iter_mut().enumerate() {
            let frac = if s == FaultKind::ALL.len() {
                self.config.nonfault_test_fraction
            } else {
                self.config.fault_test_fraction
            };
            members.shuffle(&mut rng);
            let n_test = (members.len() as f64 * frac).round() as usize;
            for &i in &members[..n_test] {
                is_test[i] = true;
            }
        }
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, &(s, f)) in runs.iter().enumerate() {
            let metas = self.expand(i as u64, s, f);
            if is_test[i] {
                test.extend(metas);
            } else {
                train.extend(metas);
            }
        }
        (
            DatasetPlan {
                split: Split::Train,
                samples: train,
            },
            DatasetPlan {
                split: Split::Test,
                samples: test,
            },
        )
    }

    /// Materializes one sample. Depends only on the seed and `meta`.
    pub fn sample(&self, meta: &SampleMeta) -> Result<Sample> {
        let cfg = &self.config.waveform;
        let n = self.topology.n_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(meta.run);
        let load_scale: Vec<f64> = (0..n)
            .map(|_| rng.random_range(cfg.load_scale_min..=cfg.load_scale_max))
            .collect();
        let t0 = rng.random_range(0.0..TAU)
            + meta.window as f64 * cfg.omega_per_sample() * cfg.window as f64;

        let zero_hops = vec![0; n];
        let hops = match &meta.fault {
            Some(f) if f.location_bus <= n => &self.hops[f.node()],
            Some(f) => {
                return Err(Error::Validation(format!(
                    "fault bus {} outside 1..={n}",
                    f.location_bus
                )))
            }
            None => &zero_hops,
        };
        let mut x = waveform_with_hops(n, meta.fault.as_ref(), hops, &load_scale, t0, cfg);

        let row = 3 * cfg.window;
        if cfg.noise_std > 0.0 {
            let mut noise_rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ NOISE_KEY);
            noise_rng.set_stream(meta.index);
            let normal = Normal::new(0.0, cfg.noise_std)
                .map_err(|e| Error::Parameter(format!("noise: {e}")))?;
            for v in x.data_mut() {
                *v += normal.sample(&mut noise_rng);
            }
        }
        for (b, chunk) in x.data_mut().chunks_mut(row).enumerate() {
            if self.topology.is_measured(b) {
                // Stored as f32 on disk; rounding here keeps files bit-exact.
                chunk.iter_mut().for_each(|v| *v = *v as f32 as f64);
            } else {
                chunk.fill(0.0);
            }
        }
        Ok(Sample {
            x,
            label: label(meta.fault.as_ref()),
            meta: *meta,
        })
    }

    pub fn materialize(&self, plan: &DatasetPlan) -> Result<Dataset> {
        let samples = plan
            .samples
            .iter()
            .map(|m| self.sample(m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            manifest: self.manifest(plan),
            samples,
        })
    }

    pub fn manifest(&self, plan: &DatasetPlan) -> DatasetManifest {
        DatasetManifest::new(
            &self.topology,
            &self.config,
            plan.split,
            plan.samples.clone(),
        )
    }

    /// Streams the dataset file for `plan` into `out` without holding all
    /// samples in memory.
    pub fn write_plan<W: Write>(&self, plan: &DatasetPlan, out: W) -> Result<()> {
        let manifest = self.manifest(plan);
        format::write_stream(&manifest, plan.samples.iter().map(|m| self.sample(m)), out)
    }

    pub fn save_plan(&self, plan: &DatasetPlan, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_plan(plan, &mut out)?;
        out.flush()?;
        Ok(())
    }

    /// SHA-256 of the file `save_plan` would write.
    pub fn digest(&self, plan: &DatasetPlan) -> Result<String> {
        let mut h = Sha256::new();
        self.write_plan(plan, &mut h)?;
        Ok(hex::encode(h.finalize()))
    }
}

/// Builds and materializes the train and test splits.
pub fn generate_dataset(
    topology: &Topology,
    config: &GeneratorConfig,
) -> Result<(Dataset, Dataset)> {
    let generator = Generator::new(topology, config.clone())?;
    let (train, test) = generator.plan_split();
    Ok((
        generator.materialize(&train)?,
        generator.materialize(&test)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::FaultType;

    fn small(l: usize, nf: usize) -> Generator {
        let cfg = GeneratorConfig {
            n_load_scenarios: l,
            n_nonfault: nf,
            seed: 7,
            ..GeneratorConfig::default()
        };
        Generator::new(&Topology::default_feeder(), cfg).unwrap()
    }

    #[test]
    fn one_scenario_gives_429_fault_samples() {
        let g = small(1, 0);
        assert_eq!(g.plan_all().len(), 429);
        let (train, test) = g.plan_split();
        assert_eq!(train.len() + test.len(), 429);
    }

    #[test]
    fn ten_scenario_split_counts() {
        let (train, test) = small(10, 600).plan_split();
        assert_eq!(train.n_fault() + test.n_fault(), 4290);
        assert_eq!(test.n_fault(), 11 * 52);
        assert_eq!(test.n_nonfault(), 85);
        assert_eq!(train.n_nonfault(), 515);
    }

    #[test]
    fn zero_scenarios_is_a_parameter_error() {
        let cfg = GeneratorConfig {
            n_load_scenarios: 0,
            ..GeneratorConfig::default()
        };
        assert!(matches!(
            Generator::new(&Topology::default_feeder(), cfg),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn samples_are_reproducible_and_zero_filled() {
        let g = small(1, 4);
        let plan = g.plan_all();
        for meta in plan.iter().step_by(37) {
            let a = g.sample(meta).unwrap();
            assert_eq!(a, g.sample(meta).unwrap());
            assert!(a.label.is_consistent());
            for b in 0..13 {
                let row = &a.x.data()[b * 60..(b + 1) * 60];
                if g.topology().is_measured(b) {
                    assert!(row.iter().any(|&v| v != 0.0));
                } else {
                    assert!(row.iter().all(|&v| v == 0.0));
                }
            }
        }
        let nf = plan.last().unwrap();
        assert_eq!(g.sample(nf).unwrap().label.fault_type, FaultType::Nf);
    }

    #[test]
    fn windows_of_a_run_share_a_split() {
        let cfg = GeneratorConfig {
            n_load_scenarios: 1,
            n_nonfault: 10,
            windows_per_run: 3,
            ..GeneratorConfig::default()
        };
        let g = Generator::new(&Topology::default_feeder(), cfg).unwrap();
        let (train, test) = g.plan_split();
        assert_eq!(train.len() + test.len(), 3 * 439);
        for s in &test.samples {
            assert!(!train.samples.iter().any(|t| t.run == s.run));
        }
    }

    #[test]
    fn consecutive_windows_continue_the_sinusoid() {
        let cfg = GeneratorConfig {
            n_load_scenarios: 1,
            n_nonfault: 1,
            windows_per_run: 2,
            ..GeneratorConfig::default()
        };
        let g = Generator::new(&Topology::default_feeder(), cfg).unwrap();
        let plan = g.plan_all();
        let (w0, w1) = (plan[plan.len() - 2], plan[plan.len() - 1]);
        let (a, b) = (g.sample(&w0).unwrap(), g.sample(&w1).unwrap());
        // Least-squares fit of a·sin(ωt) + b·cos(ωt) recovers the phase exactly.
        let w = 2.0 * std::f64::consts::PI * 60.0 / 1000.0;
        let phase = |x: &crate::Tensor| {
            let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for t in 0..20 {
                let (s, c) = (w * t as f64).sin_cos();
                let y = x.at(&[0, 0, t]);
                ss += s * s;
                sc += s * c;
                cc += c * c;
                ys += y * s;
                yc += y * c;
            }
            let det = ss * cc - sc * sc;
            let a = (ys * cc - yc * sc) / det;
            let b = (yc * ss - ys * sc) / det;
            b.atan2(a)
        };
        let advance = (phase(&b.x) - phase(&a.x)).rem_euclid(TAU);
        assert!((advance - (20.0 * w).rem_euclid(TAU)).abs() < 1e-5);
    }
}
