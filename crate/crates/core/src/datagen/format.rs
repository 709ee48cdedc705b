//! Dataset file: `FGDS`, u16 version, u32-prefixed JSON manifest, fixed-size
//! records, CRC32 of everything before it.
//!
//! Record: `N·3·K` f32 LE voltages (row-major), then one byte each for the
//! event flag, type class, phase bitmask (bit 0 = A) and faulted node
//! (0-based, 255 = none).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::generate::{GeneratorConfig, SampleMeta, Split};
use super::{label, FaultType, Label, Sample};
use crate::codec::{self, Reader};
use crate::error::{Error, Result};
use crate::graph::{Topology, TopologyConfig};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"FGDS";
pub const FORMAT_VERSION: u16 = 1;
const NO_LOCATION: u8 = 255;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: Split,
    pub seed: u64,
    pub n_samples: usize,
    pub n_nodes: usize,
    pub n_phases: usize,
    pub window: usize,
    pub topology_fingerprint: String,
    pub topology: TopologyConfig,
    pub generator: GeneratorConfig,
    /// Sample count per type class name.
    pub type_counts: BTreeMap<String, usize>,
    /// Byte offset of each record from the start of the record section.
    pub offsets: Vec<u64>,
    pub samples: Vec<SampleMeta>,
}

impl DatasetManifest {
    pub fn new(
        topology: &Topology,
        generator: &GeneratorConfig,
        split: Split,
        samples: Vec<SampleMeta>,
    ) -> Self {
        let n_nodes = topology.n_nodes();
        let window = generator.waveform.window;
        let size = record_size(n_nodes, window) as u64;
        let mut type_counts = BTreeMap::new();
        for s in &samples {
            *type_counts
                .entry(label(s.fault.as_ref()).fault_type.name().to_owned())
                .or_insert(0) += 1;
        }
        DatasetManifest {
            split,
            seed: generator.seed,
            n_samples: samples.len(),
            n_nodes,
            n_phases: 3,
            window,
            topology_fingerprint: topology.fingerprint(),
            topology: TopologyConfig::from(topology),
            generator: generator.clone(),
            type_counts,
            offsets: (0..samples.len() as u64).map(|i| i * size).collect(),
            samples,
        }
    }

    pub fn record_size(&self) -> usize {
        record_size(self.n_nodes, self.window)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.n_phases != 3 {
            return Err(format!("n_phases = {}, expected 3", self.n_phases));
        }
        if self.offsets.len() != self.n_samples || self.samples.len() != self.n_samples {
            return Err(format!(
                "n_samples = {} but {} offsets and {} sample entries",
                self.n_samples,
                self.offsets.len(),
                self.samples.len()
            ));
        }
        let size = self.record_size() as u64;
        for (i, &o) in self.offsets.iter().enumerate() {
            if o != i as u64 * size {
                return Err(format!("offset {i} is {o}, expected {}", i as u64 * size));
            }
        }
        Ok(())
    }
}

fn record_size(n_nodes: usize, window: usize) -> usize {
    n_nodes * 3 * window * 4 + 4
}

/// An in-memory split: manifest plus materialized samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self) -> Split {
        self.manifest.split
    }

    /// Fails unless the dataset was generated on `topology`.
    pub fn check_topology(&self, topology: &Topology) -> Result<()> {
        let fp = topology.fingerprint();
        if fp != self.manifest.topology_fingerprint {
            return Err(Error::Compatibility(format!(
                "dataset topology {} does not match {}",
                self.manifest.topology_fingerprint, fp
            )));
        }
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology> {
        self.manifest.topology.clone().into_topology()
    }

    /// Stacks the inputs at `indices` into `[B×N×3×K]`.
    pub fn batch_x(&self, indices: &[usize]) -> Tensor {
        let (n, k) = (self.manifest.n_nodes, self.manifest.window);
        let per = n * 3 * k;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(self.samples[i].x.data());
        }
        Tensor::new(vec![indices.len(), n, 3, k], data).expect("batch shape")
    }

    pub fn labels(&self) -> impl Iterator<Item = &Label> {
        self.samples.iter().map(|s| &s.label)
    }

    pub fn count_type(&self, t: FaultType) -> usize {
        self.labels().filter(|l| l.fault_type == t).count()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        write_stream(
            &self.manifest,
            self.samples.iter().cloned().map(Ok),
            &mut out,
        )?;
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_stream(
            &self.manifest,
            self.samples.iter().cloned().map(Ok),
            &mut out,
        )?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        codec::check_magic(&mut r, MAGIC, FORMAT_VERSION)?;
        let payload = codec::split_checksum(bytes)?;
        let mut r = Reader::new(payload);
        r.take(6, "preamble")?;

        let manifest_at = r.position() as u64;
        let manifest: DatasetManifest =
            serde_json::from_slice(codec::read_blob(&mut r, "manifest")?)
                .map_err(|e| Error::format(manifest_at, format!("bad manifest: {e}")))?;
        manifest
            .validate()
            .map_err(|m| Error::format(manifest_at, m))?;

        let base = r.position();
        let size = manifest.record_size();
        let expected = manifest.n_samples * size;
        if r.remaining() != expected {
            return r.fail(format!(
                "manifest lists {} records ({expected} bytes) but {} bytes follow",
                manifest.n_samples,
                r.remaining()
            ));
        }
        let (n, k) = (manifest.n_nodes, manifest.window);
        let mut samples = Vec::with_capacity(manifest.n_samples);
        for (i, meta) in manifest.samples.iter().enumerate() {
            debug_assert_eq!(r.position(), base + manifest.offsets[i] as usize);
            let x = (0..n * 3 * k)
                .map(|_| r.f32("voltage").map(f64::from))
                .collect::<Result<Vec<_>>>()?;
            let at = r.position() as u64;
            let bytes = r.take(4, "labels")?;
            let decoded = decode_label(bytes, n)
                .map_err(|m| Error::format(at, format!("record {i}: {m}")))?;
            if decoded != label(meta.fault.as_ref()) {
                return Err(Error::format(
                    at,
                    format!("record {i}: labels disagree with manifest entry"),
                ));
            }
            samples.push(Sample {
                x: Tensor::new(vec![n, 3, k], x)?,
                label: decoded,
                meta: *meta,
            });
        }
        Ok(Dataset { manifest, samples })
    }
}

fn encode_label(l: &Label) -> [u8; 4] {
    [
        l.event as u8,
        l.fault_type.index() as u8,
        l.phase_mask(),
        l.location.map_or(NO_LOCATION, |n| n as u8),
    ]
}

fn decode_label(b: &[u8], n_nodes: usize) -> std::result::Result<Label, String> {
    let event = match b[0] {
        0 => false,
        1 => true,
        v => return Err(format!("event byte {v}")),
    };
    let fault_type = FaultType::from_index(b[1] as usize).ok_or(format!("type byte {}", b[1]))?;
    if b[2] > 0b111 {
        return Err(format!("phase mask {:#x}", b[2]));
    }
    let phase = [b[2] & 1 != 0, b[2] & 2 != 0, b[2] & 4 != 0];
    let location = match b[3] {
        NO_LOCATION => None,
        v if (v as usize) < n_nodes => Some(v as usize),
        v => return Err(format!("location byte {v} for {n_nodes} nodes")),
    };
    let l = Label {
        event,
        fault_type,
        phase,
        location,
    };
    if !l.is_consistent() {
        return Err(format!("inconsistent labels {b:?}"));
    }
    Ok(l)
}

struct CrcWriter<W> {
    inner: W,
    crc: crc32fast::Hasher,
}

impl<W: Write> CrcWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.crc.update(bytes);
        self.inner.write_all(bytes)?;
        Ok(())
    }
}

/// Writes a dataset file, pulling samples one at a time.
pub(crate) fn write_stream<W: Write>(
    manifest: &DatasetManifest,
    samples: impl Iterator<Item = Result<Sample>>,
    out: W,
) -> Result<()> {
    if manifest.n_nodes >= NO_LOCATION as usize {
        return Err(Error::Parameter(format!(
            "format stores node indices in one byte; {} nodes is too many",
            manifest.n_nodes
        )));
    }
    let mut w = CrcWriter {
        inner: out,
        crc: crc32fast::Hasher::new(),
    };
    let json = serde_json::to_vec(manifest).expect("manifest serializes");
    let mut head = Vec::with_capacity(json.len() + 10);
    head.extend_from_slice(MAGIC);
    head.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    codec::put_blob(&mut head, &json);
    w.put(&head)?;

    let per = manifest.n_nodes * 3 * manifest.window;
    let mut record = Vec::with_capacity(manifest.record_size());
    let mut written = 0;
    for sample in samples {
        let sample = sample?;
        if sample.x.numel() != per {
            return Err(Error::dim(
                "dataset record",
                sample.x.shape(),
                &[manifest.n_nodes, 3, manifest.window],
            ));
        }
        record.clear();
        for &v in sample.x.data() {
            record.extend_from_slice(&(v as f32).to_le_bytes());
        }
        record.extend_from_slice(&encode_label(&sample.label));
        w.put(&record)?;
        written += 1;
    }
    if written != manifest.n_samples {
        return Err(Error::Contract(format!(
            "manifest promises {} samples, {written} were written",
            manifest.n_samples
        )));
    }
    let crc = w.crc.clone().finalize();
    w.inner.write_all(&crc.to_le_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Generator;

    fn tiny() -> Dataset {
        let cfg = GeneratorConfig {
            n_load_scenarios: 1,
            n_nonfault: 6,
            seed: 3,
            ..GeneratorConfig::default()
        };
        let g = Generator::new(&Topology::default_feeder(), cfg).unwrap();
        let (_, test) = g.plan_split();
        g.materialize(&test).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let d = tiny();
        let bytes = d.to_bytes().unwrap();
        let back = Dataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn label_bytes_decode() {
        let l = label(Some(
            &crate::datagen::FaultConfig::new("CAG".parse().unwrap(), 1.0, 13).unwrap(),
        ));
        assert_eq!(encode_label(&l), [1, 3, 0b101, 12]);
        assert_eq!(decode_label(&encode_label(&l), 13).unwrap(), l);
        assert!(decode_label(&[1, 3, 0b101, 13], 13).is_err());
        assert!(decode_label(&[0, 3, 0b101, 12], 13).is_err());
        assert_eq!(encode_label(&label(None)), [0, 0, 0, 255]);
    }

    #[test]
    fn damaged_files_are_format_errors() {
        let bytes = tiny().to_bytes().unwrap();
        for cut in [0, 3, 5, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                Dataset::from_bytes(&bytes[..cut]),
                Err(Error::Format { .. })
            ));
        }
        let mut flipped = bytes.clone();
        let i = bytes.len() - 100;
        flipped[i] ^= 1;
        assert!(matches!(
            Dataset::from_bytes(&flipped),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn count_mismatch_is_a_format_error() {
        let mut d = tiny();
        d.samples.pop();
        d.manifest.samples.pop();
        d.manifest.offsets.pop();
        // Manifest still claims the original count.
        let mut bytes = Vec::new();
        let err = write_stream(&d.manifest, d.samples.iter().cloned().map(Ok), &mut bytes);
        assert!(matches!(err, Err(Error::Contract(_))));

        let manifest = d.manifest.clone();
        d.manifest.n_samples -= 1;
        let mut bytes = d.to_bytes().unwrap();
        // Re-sign a file whose manifest claims one more record than exists.
        let json_old = serde_json::to_vec(&d.manifest).unwrap();
        let mut m = manifest;
        m.samples = d.manifest.samples.clone();
        m.offsets = d.manifest.offsets.clone();
        let json_new = serde_json::to_vec(&m).unwrap();
        let mut forged = bytes[..6].to_vec();
        codec::put_blob(&mut forged, &json_new);
        forged.extend_from_slice(&bytes[10 + json_old.len()..bytes.len() - 4]);
        let crc = crc32fast::hash(&forged);
        forged.extend_from_slice(&crc.to_le_bytes());
        bytes = forged;
        assert!(matches!(
            Dataset::from_bytes(&bytes),
            Err(Error::Format { .. })
        ));
    }
}
