//! Named parameter storage and the per-pass forward context that hands
//! parameters to the graph.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tlf_tensor::{checkpoint, BatchStats, Graph, Mode, RunningStats, Tensor, Var, BN_MOMENTUM};

use crate::error::{config_err, input_err, Result};

const MEAN_SUFFIX: &str = ".running_mean";
const VAR_SUFFIX: &str = ".running_var";

/// Trainable tensors plus batch-norm running statistics, keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    running: BTreeMap<String, RunningStats>,
}

/// Convolution kernels are the only weight-decayed parameters.
pub fn is_decayed(name: &str) -> bool {
    name.ends_with(".kernel")
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        self.params.insert(name.to_string(), value);
    }

    pub fn running(&self, name: &str) -> Option<&RunningStats> {
        self.running.get(name)
    }

    pub fn set_running(&mut self, name: &str, stats: RunningStats) {
        self.running.insert(name.to_string(), stats);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count of parameters whose name starts with `prefix`.
    pub fn count(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.len())
            .sum()
    }

    /// Copy every parameter and running statistic under `prefix` from `other`.
    pub fn copy_prefix(&mut self, other: &ParamStore, prefix: &str) -> usize {
        let mut n = 0;
        for (k, v) in other.params.iter().filter(|(k, _)| k.starts_with(prefix)) {
            self.params.insert(k.clone(), v.clone());
            n += 1;
        }
        for (k, v) in other.running.iter().filter(|(k, _)| k.starts_with(prefix)) {
            self.running.insert(k.clone(), v.clone());
        }
        n
    }

    pub fn apply_bn_updates(&mut self, updates: &[(String, BatchStats)]) {
        for (name, stats) in updates {
            if let Some(r) = self.running.get_mut(name) {
                r.update(stats, BN_MOMENTUM);
            }
        }
    }

    pub fn to_records(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self.params.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        for (k, r) in &self.running {
            let c = r.mean.len();
            out.push((format!("{k}{MEAN_SUFFIX}"), Tensor::new(&[c], r.mean.clone()).expect("stats")));
            out.push((format!("{k}{VAR_SUFFIX}"), Tensor::new(&[c], r.var.clone()).expect("stats")));
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn from_records(records: Vec<(String, Tensor)>) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut means = BTreeMap::new();
        let mut vars = BTreeMap::new();
        for (k, v) in records {
            if let Some(base) = k.strip_suffix(MEAN_SUFFIX) {
                means.insert(base.to_string(), v.into_data());
            } else if let Some(base) = k.strip_suffix(VAR_SUFFIX) {
                vars.insert(base.to_string(), v.into_data());
            } else {
                store.params.insert(k, v);
            }
        }
        for (k, mean) in means {
            let var = vars
                .remove(&k)
                .ok_or_else(|| config_err(format!("checkpoint lacks running variance for {k}")))?;
            store.running.insert(k, RunningStats { mean, var });
        }
        if let Some(k) = vars.keys().next() {
            return Err(config_err(format!("checkpoint lacks running mean for {k}")));
        }
        Ok(store)
    }

    pub fn encode(&self) -> Vec<u8> {
        checkpoint::encode(&self.to_records())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::save(path, &self.to_records())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ParamStore::from_records(checkpoint::load(path)?)
    }
}

/// How a missing parameter is initialized.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    He(usize),
    Const(f64),
    /// Zeros except `value` over `[start, start+len)` (forget-gate bias).
    Segment { start: usize, len: usize, value: f64 },
}

impl Init {
    fn build(self, shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        match self {
            Init::He(fan_in) => {
                let std = (2.0 / fan_in as f64).sqrt();
                Tensor::from_fn(shape, |_| std * rng.sample::<f64, _>(StandardNormal))
            }
            Init::Const(v) => Tensor::full(shape, v),
            Init::Segment { start, len, value } => {
                Tensor::from_fn(shape, |i| if (start..start + len).contains(&i) { value } else { 0.0 })
            }
        }
    }
}

enum Source<'s> {
    Shared(&'s ParamStore),
    Init(&'s mut ParamStore, ChaCha8Rng),
}

impl Source<'_> {
    fn store(&self) -> &ParamStore {
        match self {
            Source::Shared(s) => s,
            Source::Init(s, _) => s,
        }
    }
}

/// One forward pass: owns nothing but borrows the graph and the store.
///
/// Parameters are registered on first use and cached, so a parameter used at
/// every time step is a single graph leaf. Parameters under a frozen prefix
/// (and all parameters in infer mode) enter the graph as constants.
pub struct Forward<'g, 's> {
    pub g: &'g mut Graph,
    source: Source<'s>,
    pub mode: Mode,
    frozen: Vec<String>,
    vars: HashMap<String, Var>,
    bn_updates: Vec<(String, BatchStats)>,
    pub rng: ChaCha8Rng,
}

impl<'g, 's> Forward<'g, 's> {
    pub fn new(g: &'g mut Graph, store: &'s ParamStore, mode: Mode, seed: u64) -> Self {
        Forward {
            g,
            source: Source::Shared(store),
            mode,
            frozen: Vec::new(),
            vars: HashMap::new(),
            bn_updates: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A pass that creates every missing parameter from `seed`.
    pub fn initializing(g: &'g mut Graph, store: &'s mut ParamStore, seed: u64) -> Self {
        Forward {
            g,
            source: Source::Init(store, ChaCha8Rng::seed_from_u64(seed)),
            mode: Mode::Train,
            frozen: Vec::new(),
            vars: HashMap::new(),
            bn_updates: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
        }
    }

    pub fn freeze(mut self, prefix: &str) -> Self {
        self.frozen.push(prefix.to_string());
        self
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.iter().any(|p| name.starts_with(p.as_str()))
    }

    /// Use `var` for parameter `name` instead of the stored value.
    pub fn bind(&mut self, name: &str, var: Var) {
        self.vars.insert(name.to_string(), var);
    }

    pub fn store(&self) -> &ParamStore {
        self.source.store()
    }

    /// Mode for layers under `name`: frozen layers always run in infer mode.
    pub fn mode_for(&self, name: &str) -> Mode {
        if self.is_frozen(name) {
            Mode::Infer
        } else {
            self.mode
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            if self.g.shape(v) != shape {
                return Err(input_err(format!(
                    "parameter {name} bound with shape {:?}, layer needs {shape:?}",
                    self.g.shape(v)
                )));
            }
            return Ok(v);
        }
        if let Source::Init(store, rng) = &mut self.source {
            if store.get(name).is_none() {
                let t = init.build(shape, rng);
                store.insert(name, t);
            }
        }
        let t = self
            .source
            .store()
            .get(name)
            .ok_or_else(|| config_err(format!("missing parameter {name}")))?;
        if t.shape() != shape {
            return Err(config_err(format!(
                "parameter {name} has shape {:?}, layer needs {shape:?}",
                t.shape()
            )));
        }
        let t = t.clone();
        let v = if self.mode == Mode::Infer || self.is_frozen(name) {
            self.g.constant(t)
        } else {
            self.g.param(name, t)
        };
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn running(&mut self, name: &str, channels: usize) -> Result<RunningStats> {
        if let Source::Init(store, _) = &mut self.source {
            if store.running(name).is_none() {
                store.set_running(name, RunningStats::new(channels));
            }
        }
        let r = self
            .source
            .store()
            .running(name)
            .ok_or_else(|| config_err(format!("missing running statistics {name}")))?;
        if r.mean.len() != channels {
            return Err(config_err(format!("running statistics {name} have wrong channel count")));
        }
        Ok(r.clone())
    }

    pub fn record_bn(&mut self, name: &str, stats: BatchStats) {
        self.bn_updates.push((name.to_string(), stats));
    }

    /// Batch statistics gathered during this pass, in call order.
    pub fn take_bn_updates(&mut self) -> Vec<(String, BatchStats)> {
        std::mem::take(&mut self.bn_updates)
    }
}
