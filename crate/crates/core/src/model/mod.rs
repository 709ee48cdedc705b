//! The two classifier architectures: a flat dense baseline (ANN) and the
//! 1-D convolution + graph convolution network (CGCN). Both share one
//! feature-extraction trunk feeding four small task heads.

mod checkpoint;
mod params;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointMeta, Stage};
pub use params::{init_params, Bound, ModelParams, Param};

use crate::error::{Error, Result};
use crate::graph::{self, PropagationMatrix, Topology};
use crate::tensor::{Mode, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Event,
    Type,
    Phase,
    Location,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Event, Task::Type, Task::Phase, Task::Location];

    pub fn name(self) -> &'static str {
        match self {
            Task::Event => "event",
            Task::Type => "type",
            Task::Phase => "phase",
            Task::Location => "location",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "event" => Ok(Task::Event),
            "type" => Ok(Task::Type),
            "phase" => Ok(Task::Phase),
            "location" | "loc" => Ok(Task::Location),
            other => Err(Error::Parameter(format!("unknown task '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Ann,
    Cgcn,
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchKind::Ann => "ann",
            ArchKind::Cgcn => "cgcn",
        })
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ann" => Ok(ArchKind::Ann),
            "cgcn" | "1d-cgcn" => Ok(ArchKind::Cgcn),
            other => Err(Error::Parameter(format!("unknown architecture '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub width: usize,
    pub stride: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            out_channels: 3,
            width: 4,
            stride: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub kind: ArchKind,
    pub n_nodes: usize,
    pub n_phases: usize,
    pub window: usize,
    pub conv: ConvSpec,
    pub gcn_features: usize,
    pub ann_hidden: [usize; 2],
    pub dropout_rate: f64,
}

impl ArchitectureSpec {
    pub fn new(kind: ArchKind, n_nodes: usize, window: usize) -> Self {
        ArchitectureSpec {
            kind,
            n_nodes,
            n_phases: 3,
            window,
            conv: ConvSpec::default(),
            gcn_features: 8,
            ann_hidden: [512, 128],
            dropout_rate: 0.1,
        }
    }

    /// 13 buses, 3 phases, 20-sample windows.
    pub fn standard(kind: ArchKind) -> Self {
        Self::new(kind, 13, 20)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 || self.n_phases == 0 || self.window == 0 {
            return Err(Error::Parameter("empty input geometry".into()));
        }
        if self.kind == ArchKind::Cgcn {
            let c = self.conv;
            if c.stride == 0 || c.width == 0 || c.out_channels == 0 {
                return Err(Error::Parameter(
                    "conv width/stride/channels must be positive".into(),
                ));
            }
            if c.width > self.window {
                return Err(Error::Parameter(format!(
                    "conv width {} exceeds window {}",
                    c.width, self.window
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Parameter(format!(
                "dropout rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Flattened input width of the dense baseline, `N·d·K`.
    pub fn ann_input_dim(&self) -> usize {
        self.n_nodes * self.n_phases * self.window
    }

    pub fn conv_out_len(&self) -> usize {
        (self.window - self.conv.width) / self.conv.stride + 1
    }

    /// Per-node feature width entering the graph convolution.
    pub fn conv_features(&self) -> usize {
        self.conv.out_channels * self.conv_out_len()
    }

    /// Width of the trunk output (per node for the CGCN).
    pub fn trunk_features(&self) -> usize {
        match self.kind {
            ArchKind::Ann => self.ann_hidden[1],
            ArchKind::Cgcn => self.gcn_features,
        }
    }

    /// `(in, out)` widths of each dense layer in a task head.
    pub fn head_layers(&self, task: Task) -> [(usize, usize); 2] {
        let f = self.trunk_features();
        match (self.kind, task) {
            (ArchKind::Cgcn, Task::Event) => [(f, 16), (16, 1)],
            (ArchKind::Cgcn, Task::Type) => [(f, 32), (32, 6)],
            (ArchKind::Cgcn, Task::Phase) => [(f, 32), (32, 3)],
            (ArchKind::Cgcn, Task::Location) => [(f, 8), (8, 1)],
            (ArchKind::Ann, Task::Event) => [(f, 32), (32, 1)],
            (ArchKind::Ann, Task::Type) => [(f, 64), (64, 6)],
            (ArchKind::Ann, Task::Phase) => [(f, 64), (64, 3)],
            (ArchKind::Ann, Task::Location) => [(f, 64), (64, self.n_nodes)],
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<usize> {
        let want = [self.n_nodes, self.n_phases, self.window];
        match shape {
            [b, rest @ ..] if rest == want => Ok(*b),
            _ => Err(Error::dim("model input", shape, &want)),
        }
    }
}

/// Trunk forward pass for the dense baseline: flatten, then two ReLU dense
/// layers with dropout. `x: [B×N×d×K] → [B×hidden₂]`.
pub fn forward_trunk_ann<R: Rng + ?Sized>(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &Bound,
    x: Var,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    trunk_ann(tape, params, bound, x, mode, rng, None)
}

fn trunk_ann<R: Rng + ?Sized>(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &Bound,
    x: Var,
    mode: Mode,
    rng: &mut R,
    mut trace: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let spec = params.spec();
    let batch = spec.check_input(tape.shape(x))?;
    let mut h = tape.reshape(x, vec![batch, spec.ann_input_dim()])?;
    if let Some(t) = trace.as_deref_mut() {
        t.push(h);
    }
    for layer in 0..2 {
        h = dense(tape, bound, &format!("trunk.{layer}"), h)?;
        h = tape.relu(h);
        h = tape.dropout(h, spec.dropout_rate, mode, rng)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(h);
        }
    }
    Ok(h)
}

/// Trunk forward pass for the CGCN: a shared 1-D convolution over each
/// node's phase-by-time window, then one graph convolution
/// `ReLU(P·H·W)`. `x: [B×N×d×K] → [B×N×F]`.
pub fn forward_trunk_cgcn(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &Bound,
    x: Var,
    propagation: &PropagationMatrix,
) -> Result<Var> {
    trunk_cgcn(tape, params, bound, x, propagation, None)
}

fn trunk_cgcn(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &Bound,
    x: Var,
    propagation: &PropagationMatrix,
    mut trace: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let spec = params.spec();
    let batch = spec.check_input(tape.shape(x))?;
    let n = spec.n_nodes;
    if propagation.n_nodes() != n {
        return Err(Error::dim(
            "forward_trunk_cgcn",
            &[n],
            propagation.values().shape(),
        ));
    }
    if let Some(t) = trace.as_deref_mut() {
        t.push(x);
    }
    let seqs = tape.reshape(x, vec![batch * n, spec.n_phases, spec.window])?;
    let conv = tape.conv1d_valid(
        seqs,
        bound.get("trunk.0.kernels")?,
        bound.get("trunk.0.bias")?,
        spec.conv.stride,
    )?;
    let conv = tape.relu(conv);
    if let Some(t) = trace.as_deref_mut() {
        let per_node = tape.reshape(
            conv,
            vec![batch, n, spec.conv.out_channels, spec.conv_out_len()],
        )?;
        t.push(per_node);
    }
    let h = tape.reshape(conv, vec![batch, n, spec.conv_features()])?;
    let mixed = graph::propagate(tape, propagation, h)?;
    let flat = tape.reshape(mixed, vec![batch * n, spec.conv_features()])?;
    let z = tape.matmul(flat, bound.get("trunk.1.weight")?)?;
    let z = tape.relu(z);
    let out = tape.reshape(z, vec![batch, n, spec.gcn_features])?;
    if let Some(t) = trace {
        t.push(out);
    }
    Ok(out)
}

/// Task head on top of a trunk output.
///
/// Outputs: event `[B]` fault probability; type `[B×6]` logits; phase
/// `[B×3]` per-phase probabilities; location `[B×N]` per-node scores.
/// CGCN event/type/phase heads read the node-mean of the trunk; the CGCN
/// location head scores each node with shared weights.
pub fn forward_head<R: Rng + ?Sized>(
    task: Task,
    tape: &mut Tape,
    params: &ModelParams,
    bound: &Bound,
    trunk_out: Var,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let spec = params.spec();
    if !params.has_head(task) {
        return Err(Error::Parameter(format!("model has no {task} head")));
    }
    let prefix = task.name();
    let hidden = |tape: &mut Tape, rng: &mut R, h: Var| -> Result<Var> {
        let h = dense(tape, bound, &format!("{prefix}.0"), h)?;
        let h = tape.relu(h);
        tape.dropout(h, spec.dropout_rate, mode, rng)
    };
    let out_layer = format!("{prefix}.1");

    match (spec.kind, task) {
        (ArchKind::Cgcn, Task::Location) => {
            let shape = tape.shape(trunk_out).to_vec();
            let [batch, n, f] = shape[..] else {
                return Err(Error::Shape(format!("location head input {shape:?}")));
            };
            let flat = tape.reshape(trunk_out, vec![batch * n, f])?;
            let h = hidden(tape, rng, flat)?;
            let score = dense(tape, bound, &out_layer, h)?;
            let score = tape.reshape(score, vec![batch, n])?;
            Ok(tape.sigmoid(score))
        }
        (kind, _) => {
            let features = match kind {
                ArchKind::Cgcn => graph::global_mean_pool(tape, trunk_out)?,
                ArchKind::Ann => trunk_out,
            };
            let h = hidden(tape, rng, features)?;
            let out = dense(tape, bound, &out_layer, h)?;
            match task {
                Task::Type => Ok(out),
                Task::Event => {
                    let batch = tape.shape(out)[0];
                    let flat = tape.reshape(out, vec![batch])?;
                    Ok(tape.sigmoid(flat))
                }
                Task::Phase | Task::Location => Ok(tape.sigmoid(out)),
            }
        }
    }
}

/// Eval mode never draws from the rng; any generator will do.
fn eval_rng() -> rand_chacha::ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(0)
}

fn dense(tape: &mut Tape, bound: &Bound, layer: &str, x: Var) -> Result<Var> {
    let z = tape.matmul(x, bound.get(&format!("{layer}.weight"))?)?;
    tape.add_bias(z, bound.get(&format!("{layer}.bias"))?)
}

/// Parameters plus the graph they were built for.
#[derive(Clone, Debug)]
pub struct Model {
    pub params: ModelParams,
    topology: Topology,
    propagation: PropagationMatrix,
}

impl Model {
    pub fn new(params: ModelParams, topology: Topology) -> Result<Self> {
        if params.spec().n_nodes != topology.n_nodes() {
            return Err(Error::Compatibility(format!(
                "model expects {} nodes, topology has {}",
                params.spec().n_nodes,
                topology.n_nodes()
            )));
        }
        let propagation = topology.propagation();
        Ok(Model {
            params,
            topology,
            propagation,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        self.params.spec()
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn propagation(&self) -> &PropagationMatrix {
        &self.propagation
    }

    pub fn trunk<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        match self.spec().kind {
            ArchKind::Ann => forward_trunk_ann(tape, &self.params, bound, x, mode, rng),
            ArchKind::Cgcn => forward_trunk_cgcn(tape, &self.params, bound, x, &self.propagation),
        }
    }

    /// Trunk and `task` head in one pass.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        task: Task,
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let trunk = self.trunk(tape, bound, x, mode, rng)?;
        forward_head(task, tape, &self.params, bound, trunk, mode, rng)
    }

    /// Eval-mode output of the `task` head for a batch `[B×N×d×K]`.
    pub fn predict(&self, task: Task, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind_constant(&mut tape);
        let xv = tape.constant(x.clone());
        let mut no_rng = eval_rng();
        let out = self.forward(&mut tape, &bound, task, xv, Mode::Eval, &mut no_rng)?;
        Ok(tape.take(out))
    }

    /// Eval-mode trunk output for a batch.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind_constant(&mut tape);
        let xv = tape.constant(x.clone());
        let mut no_rng = eval_rng();
        let out = self.trunk(&mut tape, &bound, xv, Mode::Eval, &mut no_rng)?;
        Ok(tape.take(out))
    }

    /// Shapes of the trunk's input and each layer output, in order.
    ///
    /// ANN: flattened input, dense₁, dense₂. CGCN: input, per-node conv
    /// output `[B×N×C×K']`, graph-conv output `[B×N×F]`.
    pub fn trunk_shapes(&self, x: &Tensor) -> Result<Vec<Vec<usize>>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_constant(&mut tape);
        let xv = tape.constant(x.clone());
        let mut trace = Vec::new();
        let mut no_rng = eval_rng();
        match self.spec().kind {
            ArchKind::Ann => {
                trunk_ann(
                    &mut tape,
                    &self.params,
                    &bound,
                    xv,
                    Mode::Eval,
                    &mut no_rng,
                    Some(&mut trace),
                )?;
            }
            ArchKind::Cgcn => {
                trunk_cgcn(
                    &mut tape,
                    &self.params,
                    &bound,
                    xv,
                    &self.propagation,
                    Some(&mut trace),
                )?;
            }
        }
        Ok(trace.iter().map(|&v| tape.shape(v).to_vec()).collect())
    }
}
