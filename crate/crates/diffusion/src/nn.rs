//! Parameter store and the channels-last layers shared by both backbones.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use candle_core::{DType, Device, Tensor, Var, D};
use dragpart_core::rng::{self, DetRng};

use crate::conv;
use crate::error::{Error, Result};

/// Named trainable tensors, ordered by name.
#[derive(Clone, Debug)]
pub struct ParamStore {
    dtype: DType,
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites `name` with `values` (row-major, f32), checking the shape.
    pub fn assign(&self, name: &str, dims: &[usize], values: &[f32]) -> Result<()> {
        let var = self.vars.get(name).ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if var.dims() != dims {
            return Err(Error::Checkpoint(format!("parameter {name}: expected shape {:?}, file has {dims:?}", var.dims())));
        }
        let t = Tensor::from_slice(values, dims, &Device::Cpu)?.to_dtype(self.dtype)?;
        var.set(&t)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub enum InitKind {
    Zeros,
    Ones,
    /// Normal with the given standard deviation.
    Normal(f64),
    /// Normal with standard deviation `gain / sqrt(fan_in)`.
    FanIn { fan_in: usize, gain: f64 },
}

/// Scoped, seeded parameter factory. Parameters are drawn in creation order.
#[derive(Clone)]
pub struct Init {
    vars: Rc<RefCell<BTreeMap<String, Var>>>,
    rng: Rc<RefCell<DetRng>>,
    prefix: String,
    dtype: DType,
}

impl Init {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            vars: Rc::default(),
            rng: Rc::new(RefCell::new(rng::stream(seed, rng::domain::MODEL_INIT, 0))),
            prefix: String::new(),
            dtype,
        }
    }

    pub fn pp(&self, name: impl AsRef<str>) -> Init {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Init { prefix, ..self.clone() }
    }

    pub fn tensor(&self, name: &str, dims: &[usize], kind: InitKind) -> Result<Tensor> {
        let full = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        let n: usize = dims.iter().product();
        let values: Vec<f64> = match kind {
            InitKind::Zeros => vec![0.0; n],
            InitKind::Ones => vec![1.0; n],
            InitKind::Normal(std) => self.normals(n, std),
            InitKind::FanIn { fan_in, gain } => self.normals(n, gain / (fan_in.max(1) as f64).sqrt()),
        };
        let t = Tensor::from_vec(values, dims, &Device::Cpu)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let tensor = var.as_tensor().clone();
        if self.vars.borrow_mut().insert(full.clone(), var).is_some() {
            return Err(Error::Config(format!("duplicate parameter name {full}")));
        }
        Ok(tensor)
    }

    fn normals(&self, n: usize, std: f64) -> Vec<f64> {
        let mut rng = self.rng.borrow_mut();
        (0..n).map(|_| std * rng::normal(&mut *rng)).collect()
    }

    pub fn finish(self) -> ParamStore {
        let vars = self.vars.borrow().clone();
        ParamStore { dtype: self.dtype, vars }
    }
}

/// `x W + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(init: &Init, fan_in: usize, fan_out: usize) -> Result<Self> {
        Self::with_init(init, fan_in, fan_out, true, InitKind::FanIn { fan_in, gain: 1.0 })
    }

    /// Weight and bias both start at exactly zero.
    pub fn zeros(init: &Init, fan_in: usize, fan_out: usize, bias: bool) -> Result<Self> {
        Self::with_init(init, fan_in, fan_out, bias, InitKind::Zeros)
    }

    pub fn with_init(init: &Init, fan_in: usize, fan_out: usize, bias: bool, kind: InitKind) -> Result<Self> {
        let weight = init.tensor("weight", &[fan_in, fan_out], kind)?;
        let bias = if bias { Some(init.tensor("bias", &[fan_out], InitKind::Zeros)?) } else { None };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut dims = x.dims().to_vec();
        let fan_in = dims.pop().unwrap_or(1);
        let rows = x.elem_count() / fan_in.max(1);
        let mut y = x.reshape((rows, fan_in))?.matmul(&self.weight)?;
        if let Some(b) = &self.bias {
            y = y.broadcast_add(b)?;
        }
        dims.push(self.weight.dim(1)?);
        Ok(y.reshape(dims)?)
    }
}

/// Padded `k x k` convolution on `(B, H, W, C)`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    kernel: usize,
    stride: usize,
}

impl Conv2d {
    pub fn new(init: &Init, c_in: usize, c_out: usize, kernel: usize, stride: usize) -> Result<Self> {
        let fan_in = kernel * kernel * c_in;
        Self::with_init(init, c_in, c_out, kernel, stride, InitKind::FanIn { fan_in, gain: 1.0 })
    }

    pub fn with_init(init: &Init, c_in: usize, c_out: usize, kernel: usize, stride: usize, kind: InitKind) -> Result<Self> {
        let weight = init.tensor("weight", &[kernel * kernel * c_in, c_out], kind)?;
        let bias = Some(init.tensor("bias", &[c_out], InitKind::Zeros)?);
        Ok(Self { weight, bias, kernel, stride })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(conv::conv2d(x, &self.weight, self.bias.as_ref(), self.kernel, self.stride, self.kernel / 2)?)
    }
}

/// Group normalization over `(B, ..., C)` with spatial axes flattened.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    groups: usize,
    gamma: Tensor,
    beta: Tensor,
}

const NORM_EPS: f64 = 1e-5;

impl GroupNorm {
    pub fn new(init: &Init, channels: usize, groups: usize) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::Config(format!("{channels} channels do not split into {groups} groups")));
        }
        Ok(Self {
            groups,
            gamma: init.tensor("gamma", &[channels], InitKind::Ones)?,
            beta: init.tensor("beta", &[channels], InitKind::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let (b, c) = (dims[0], dims[dims.len() - 1]);
        let g = x.reshape((b, (), self.groups, c / self.groups))?;
        let mean = g.mean_keepdim(3)?.mean_keepdim(1)?;
        let centered = g.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(3)?.mean_keepdim(1)?;
        let normed = centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?.reshape(dims)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Layer normalization over the last axis, optionally without affine parameters.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    affine: Option<(Tensor, Tensor)>,
}

impl LayerNorm {
    pub fn new(init: &Init, channels: usize) -> Result<Self> {
        let gamma = init.tensor("gamma", &[channels], InitKind::Ones)?;
        let beta = init.tensor("beta", &[channels], InitKind::Zeros)?;
        Ok(Self { affine: Some((gamma, beta)) })
    }

    pub fn plain() -> Self {
        Self { affine: None }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
        match &self.affine {
            Some((g, b)) => Ok(normed.broadcast_mul(g)?.broadcast_add(b)?),
            None => Ok(normed),
        }
    }
}

/// Projected keys and values, reusable across attention calls.
#[derive(Clone, Debug)]
pub struct KeyValues {
    pub keys: Tensor,
    pub values: Tensor,
}

/// Multi-head attention on token sequences `(B, N, C)`.
#[derive(Clone, Debug)]
pub struct Attention {
    heads: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

impl Attention {
    pub fn new(init: &Init, dim: usize, context_dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("width {dim} does not split into {heads} heads")));
        }
        let no_bias = |name: &str, fan_in: usize| {
            Linear::with_init(&init.pp(name), fan_in, dim, false, InitKind::FanIn { fan_in, gain: 1.0 })
        };
        Ok(Self {
            heads,
            q: no_bias("q", dim)?,
            k: no_bias("k", context_dim)?,
            v: no_bias("v", context_dim)?,
            out: Linear::new(&init.pp("out"), dim, dim)?,
        })
    }

    pub fn key_values(&self, context: &Tensor) -> Result<KeyValues> {
        Ok(KeyValues { keys: self.k.forward(context)?, values: self.v.forward(context)? })
    }

    /// Attends queries from `x` to the given keys and values.
    pub fn attend(&self, x: &Tensor, kv: &KeyValues) -> Result<Tensor> {
        let q = self.q.forward(x)?;
        let (b, n, c) = q.dims3()?;
        let m = kv.keys.dim(1)?;
        let d = c / self.heads;
        let split = |t: &Tensor, len: usize| -> Result<Tensor> {
            Ok(t.reshape((b, len, self.heads, d))?.transpose(1, 2)?.contiguous()?)
        };
        let (q, k, v) = (split(&q, n)?, split(&kv.keys, m)?, split(&kv.values, m)?);
        let scores = (q.matmul(&k.t()?)? * (1.0 / (d as f64).sqrt()))?;
        let weights = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let mixed = weights.matmul(&v)?.transpose(1, 2)?.reshape((b, n, c))?;
        self.out.forward(&mixed)
    }

    pub fn forward(&self, x: &Tensor, context: &Tensor) -> Result<Tensor> {
        self.attend(x, &self.key_values(context)?)
    }
}

/// Two-layer GELU MLP.
#[derive(Clone, Debug)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(init: &Init, dim: usize, mult: usize) -> Result<Self> {
        Ok(Self { up: Linear::new(&init.pp("up"), dim, dim * mult)?, down: Linear::new(&init.pp("down"), dim * mult, dim)? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.gelu()?)
    }
}

/// Sinusoidal embedding of integer timesteps, `(B, dim)`.
pub fn timestep_embedding(t: &[usize], dim: usize, dtype: DType) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(t.len() * dim);
    for &step in t {
        for i in 0..dim {
            let freq = (-(10_000f64.ln()) * (i % half) as f64 / half as f64).exp();
            let arg = step as f64 * freq;
            data.push(if i < half { arg.cos() } else { arg.sin() });
        }
    }
    Ok(Tensor::from_vec(data, (t.len(), dim), &Device::Cpu)?.to_dtype(dtype)?)
}
