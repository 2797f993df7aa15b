use std::collections::BTreeMap;
use std::hash::Hasher;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

/// Forward-pass mode.
///
/// `train` selects batch statistics in normalization layers (and updates their
/// running estimates). `frozen` reads every parameter through `detach`, so no
/// gradient can reach the parameters of the network being evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    pub train: bool,
    pub frozen: bool,
}

impl Mode {
    pub const TRAIN: Mode = Mode {
        train: true,
        frozen: false,
    };
    pub const EVAL: Mode = Mode {
        train: false,
        frozen: false,
    };
    /// Eval-mode statistics, parameters treated as constants.
    pub const FROZEN: Mode = Mode {
        train: false,
        frozen: true,
    };

    pub(crate) fn read(&self, v: &Var) -> Tensor {
        if self.frozen {
            v.as_tensor().detach()
        } else {
            v.as_tensor().clone()
        }
    }
}

/// Named parameters (trainable) and buffers (running statistics) of one sub-network.
#[derive(Debug, Clone)]
pub struct ParamSet {
    group: String,
    params: BTreeMap<String, Var>,
    buffers: BTreeMap<String, Var>,
}

impl ParamSet {
    pub fn new(group: impl Into<String>) -> Self {
        Self {
            group: group.into(),
            params: BTreeMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    pub fn group(&self) -> &str {
        &self.group
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.params.iter()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.buffers.iter()
    }

    pub fn param(&self, name: &str) -> Option<&Var> {
        self.params.get(name)
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(|v| v.elem_count()).sum()
    }

    /// Hash over the bit patterns of the trainable parameters.
    pub fn fingerprint(&self) -> Result<u64> {
        Self::hash(self.params.iter())
    }

    /// Hash over parameters and buffers (running statistics included).
    pub fn state_fingerprint(&self) -> Result<u64> {
        Self::hash(self.params.iter().chain(self.buffers.iter()))
    }

    fn hash<'a>(entries: impl Iterator<Item = (&'a String, &'a Var)>) -> Result<u64> {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (name, v) in entries {
            h.write(name.as_bytes());
            for x in v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()? {
                h.write_u64(x.to_bits());
            }
        }
        Ok(h.finish())
    }

    /// Copies values for every entry from `values`, keyed by entry name.
    pub fn assign(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, v) in self.params.iter().chain(self.buffers.iter()) {
            let src = values.get(name).ok_or_else(|| {
                Error::Checkpoint(format!("group {} is missing entry `{name}`", self.group))
            })?;
            if src.dims() != v.dims() {
                return Err(Error::Checkpoint(format!(
                    "{}/{name}: stored shape {:?} != model shape {:?}",
                    self.group,
                    src.dims(),
                    v.dims()
                )));
            }
            v.set(&src.to_dtype(v.dtype())?)?;
        }
        Ok(())
    }

    /// Snapshot of every parameter and buffer value.
    pub fn snapshot(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .chain(self.buffers.iter())
            .map(|(k, v)| (k.clone(), v.as_tensor().copy().expect("cpu copy")))
            .collect()
    }
}

/// Deterministic initializer that registers entries into a [`ParamSet`].
pub struct Init {
    set: ParamSet,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
}

impl Init {
    pub fn new(group: &str, seed: u64, dtype: DType) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(group.bytes().fold(0u64, |a, b| a.wrapping_mul(131).wrapping_add(b as u64)));
        Self {
            set: ParamSet::new(group),
            rng,
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn register(&mut self, name: &str, values: Vec<f64>, shape: &[usize], buffer: bool) -> Result<Var> {
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let map = if buffer {
            &mut self.set.buffers
        } else {
            &mut self.set.params
        };
        if map.insert(name.to_string(), var.clone()).is_some() {
            return Err(Error::Config(format!("duplicate parameter {}/{name}", self.set.group)));
        }
        Ok(var)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let values = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.register(name, values, shape, false)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let dist = Uniform::new_inclusive(-bound, bound);
        let values = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.register(name, values, shape, false)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        self.register(name, vec![value; n], shape, false)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        self.register(name, vec![value; n], shape, true)
    }

    pub fn finish(self) -> ParamSet {
        self.set
    }
}
