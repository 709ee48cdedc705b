use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use sha2::{Digest, Sha256};

use super::{ArchKind, ArchitectureSpec, Task};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// A named trainable tensor. Ids look like `trunk.0.weight` or
/// `location.1.bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub id: String,
    pub value: Tensor,
}

struct Slot {
    id: String,
    shape: Vec<usize>,
    fan_in: usize,
    /// Weight feeding a ReLU (He scaling) rather than an output layer.
    relu: bool,
    bias: bool,
}

fn weight(id: String, shape: Vec<usize>, fan_in: usize, relu: bool) -> Slot {
    Slot {
        id,
        shape,
        fan_in,
        relu,
        bias: false,
    }
}

fn bias(id: String, len: usize) -> Slot {
    Slot {
        id,
        shape: vec![len],
        fan_in: 0,
        relu: false,
        bias: true,
    }
}

fn trunk_layout(spec: &ArchitectureSpec) -> Vec<Slot> {
    match spec.kind {
        ArchKind::Ann => {
            let [h1, h2] = spec.ann_hidden;
            let d = spec.ann_input_dim();
            vec![
                weight("trunk.0.weight".into(), vec![d, h1], d, true),
                bias("trunk.0.bias".into(), h1),
                weight("trunk.1.weight".into(), vec![h1, h2], h1, true),
                bias("trunk.1.bias".into(), h2),
            ]
        }
        ArchKind::Cgcn => {
            let c = spec.conv;
            let f = spec.conv_features();
            vec![
                weight(
                    "trunk.0.kernels".into(),
                    vec![c.out_channels, spec.n_phases, c.width],
                    spec.n_phases * c.width,
                    true,
                ),
                bias("trunk.0.bias".into(), c.out_channels),
                weight("trunk.1.weight".into(), vec![f, spec.gcn_features], f, true),
            ]
        }
    }
}

fn head_layout(spec: &ArchitectureSpec, task: Task) -> Vec<Slot> {
    let [(i0, o0), (i1, o1)] = spec.head_layers(task);
    let p = task.name();
    vec![
        weight(format!("{p}.0.weight"), vec![i0, o0], i0, true),
        bias(format!("{p}.0.bias"), o0),
        weight(format!("{p}.1.weight"), vec![i1, o1], i1, false),
        bias(format!("{p}.1.bias"), o1),
    ]
}

fn init_slots<R: Rng + ?Sized>(slots: Vec<Slot>, rng: &mut R) -> Vec<Param> {
    slots
        .into_iter()
        .map(|s| {
            let n: usize = s.shape.iter().product();
            let data = if s.bias {
                vec![0.0; n]
            } else {
                // Uniform(−a, a) has variance a²/3.
                let var = if s.relu { 2.0 } else { 1.0 } / s.fan_in as f64;
                let a = (3.0 * var).sqrt();
                (0..n).map(|_| rng.random_range(-a..a)).collect()
            };
            Param {
                id: s.id,
                value: Tensor::new(s.shape, data).expect("slot shape"),
            }
        })
        .collect()
}

/// Fresh parameters with all four heads. Hidden weights are drawn with
/// variance `2/fan_in`, output-layer weights with `1/fan_in`; biases are 0.
pub fn init_params<R: Rng + ?Sized>(spec: &ArchitectureSpec, rng: &mut R) -> Result<ModelParams> {
    spec.validate()?;
    let mut params = init_slots(trunk_layout(spec), rng);
    for task in Task::ALL {
        params.extend(init_slots(head_layout(spec, task), rng));
    }
    Ok(ModelParams {
        spec: spec.clone(),
        params,
        frozen: BTreeSet::new(),
    })
}

/// Tape handles for every bound parameter.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn get(&self, id: &str) -> Result<Var> {
        self.vars
            .get(id)
            .copied()
            .ok_or_else(|| Error::Parameter(format!("parameter '{id}' is not bound")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    spec: ArchitectureSpec,
    params: Vec<Param>,
    frozen: BTreeSet<String>,
}

impl ModelParams {
    /// Reassembles parameters (e.g. from a checkpoint), checking every
    /// id and shape against the architecture.
    pub fn from_parts(
        spec: ArchitectureSpec,
        params: Vec<Param>,
        frozen: BTreeSet<String>,
    ) -> Result<Self> {
        spec.validate()?;
        let mut by_id: HashMap<&str, &Param> = HashMap::new();
        for p in &params {
            if by_id.insert(&p.id, p).is_some() {
                return Err(Error::Parameter(format!("duplicate parameter '{}'", p.id)));
            }
        }
        let mut expected = trunk_layout(&spec);
        for task in Task::ALL {
            if by_id.contains_key(format!("{}.0.weight", task.name()).as_str()) {
                expected.extend(head_layout(&spec, task));
            }
        }
        if expected.len() != params.len() {
            return Err(Error::Parameter(format!(
                "expected {} parameters for this architecture, found {}",
                expected.len(),
                params.len()
            )));
        }
        let mut ordered = Vec::with_capacity(params.len());
        for slot in expected {
            let p = by_id
                .get(slot.id.as_str())
                .ok_or_else(|| Error::Parameter(format!("missing parameter '{}'", slot.id)))?;
            if p.value.shape() != slot.shape.as_slice() {
                return Err(Error::dim("parameter shape", p.value.shape(), &slot.shape));
            }
            ordered.push((*p).clone());
        }
        if let Some(unknown) = frozen.iter().find(|id| !by_id.contains_key(id.as_str())) {
            return Err(Error::Parameter(format!(
                "frozen id '{unknown}' is not a parameter"
            )));
        }
        Ok(ModelParams {
            spec,
            params: ordered,
            frozen,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, id: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.id == id).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut Tensor> {
        self.params
            .iter_mut()
            .find(|p| p.id == id)
            .map(|p| &mut p.value)
    }

    pub fn is_trunk(id: &str) -> bool {
        id.starts_with("trunk.")
    }

    pub fn has_head(&self, task: Task) -> bool {
        let key = format!("{}.0.weight", task.name());
        self.params.iter().any(|p| p.id == key)
    }

    pub fn heads(&self) -> Vec<Task> {
        Task::ALL
            .into_iter()
            .filter(|&t| self.has_head(t))
            .collect()
    }

    pub fn is_frozen(&self, id: &str) -> bool {
        self.frozen.contains(id)
    }

    pub fn frozen(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    pub fn freeze_trunk(&mut self) {
        for p in &self.params {
            if Self::is_trunk(&p.id) {
                self.frozen.insert(p.id.clone());
            }
        }
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.clear();
    }

    /// Copy keeping the trunk and only the listed heads.
    pub fn with_heads(&self, tasks: &[Task]) -> ModelParams {
        let keep = |id: &str| {
            Self::is_trunk(id)
                || tasks
                    .iter()
                    .any(|t| id.starts_with(&format!("{}.", t.name())))
        };
        ModelParams {
            spec: self.spec.clone(),
            params: self
                .params
                .iter()
                .filter(|p| keep(&p.id))
                .cloned()
                .collect(),
            frozen: self.frozen.iter().filter(|id| keep(id)).cloned().collect(),
        }
    }

    /// The trunk of `self` (frozen) plus a freshly initialized `task` head.
    pub fn transfer<R: Rng + ?Sized>(&self, task: Task, rng: &mut R) -> ModelParams {
        let mut params: Vec<Param> = self
            .params
            .iter()
            .filter(|p| Self::is_trunk(&p.id))
            .cloned()
            .collect();
        params.extend(init_slots(head_layout(&self.spec, task), rng));
        let mut out = ModelParams {
            spec: self.spec.clone(),
            params,
            frozen: BTreeSet::new(),
        };
        out.freeze_trunk();
        out
    }

    /// SHA-256 over the trunk's ids, shapes and values.
    pub fn trunk_digest(&self) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| Self::is_trunk(&p.id)) {
            h.update(p.id.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Registers every parameter on `tape`; frozen ones do not require grad.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let mut vars = HashMap::with_capacity(self.params.len());
        for p in &self.params {
            let mut t = p.value.clone();
            t.requires_grad = !self.frozen.contains(&p.id);
            vars.insert(p.id.clone(), tape.leaf(t));
        }
        Bound { vars }
    }

    /// Registers every parameter as a constant, for inference.
    pub fn bind_constant(&self, tape: &mut Tape) -> Bound {
        let mut vars = HashMap::with_capacity(self.params.len());
        for p in &self.params {
            vars.insert(p.id.clone(), tape.constant(p.value.clone()));
        }
        Bound { vars }
    }

    /// Copies gradients from a tape after `backward` into each unfrozen
    /// parameter's `grad`. Frozen parameters, and parameters the loss did
    /// not reach, end with `grad = None`.
    pub fn store_grads(&mut self, tape: &Tape, bound: &Bound) -> Result<()> {
        for p in &mut self.params {
            let v = bound.get(&p.id)?;
            p.value.grad = if self.frozen.contains(&p.id) {
                None
            } else {
                tape.grad(v).map(<[f64]>::to_vec)
            };
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.value.grad = None;
        }
    }
}
