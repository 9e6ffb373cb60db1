//! MLP with tape-recorded forward, the conditional denoiser wrapper, and a
//! versioned binary checkpoint format.

use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Activation> {
        match tag {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Identity),
            t => Err(Error::Config(format!("unknown activation tag {t}"))),
        }
    }

    fn apply(self, v: &mut [f64]) {
        match self {
            Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Identity => {}
        }
    }
}

/// Fully connected net; `activation` is applied after every layer except the
/// last. Parameters are stored as `[w0, b0, w1, b1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<Tensor>,
}

impl Mlp {
    pub fn zeros(sizes: Vec<usize>, activation: Activation) -> Result<Mlp> {
        if sizes.len() < 2 || sizes.iter().any(|s| *s == 0) {
            return Err(Error::Config(format!("bad layer sizes {sizes:?}")));
        }
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            params.push(Tensor::zeros(vec![w[1], w[0]]));
            params.push(Tensor::zeros(vec![w[1]]));
        }
        Ok(Mlp {
            sizes,
            activation,
            params,
        })
    }

    /// Xavier-style init: w ~ N(0, 1/fan_in), biases zero.
    pub fn random<R: Rng>(sizes: Vec<usize>, activation: Activation, rng: &mut R) -> Result<Mlp> {
        let mut mlp = Mlp::zeros(sizes, activation)?;
        for (i, p) in mlp.params.iter_mut().enumerate() {
            if i % 2 == 0 {
                let fan_in = p.shape()[1] as f64;
                let dist = Normal::new(0.0, (1.0 / fan_in).sqrt()).expect("valid std");
                for v in p.values_mut() {
                    *v = dist.sample(rng);
                }
            }
        }
        Ok(mlp)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len()
            || params
                .iter()
                .zip(&self.params)
                .any(|(a, b)| !a.same_shape(b))
        {
            return Err(Error::Shape("parameter list does not match model".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn param_name(&self, idx: usize) -> String {
        let layer = idx / 2;
        if idx % 2 == 0 {
            format!("layer{layer}.w")
        } else {
            format!("layer{layer}.b")
        }
    }

    /// Pure forward pass; bit-identical across calls for fixed params/input.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "mlp input dim {} != expected {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut h = input.to_vec();
        let n_layers = self.num_layers();
        for l in 0..n_layers {
            let w = &self.params[2 * l];
            let b = &self.params[2 * l + 1];
            let (m, n) = (w.shape()[0], w.shape()[1]);
            let wv = w.values();
            let mut out = b.values().to_vec();
            for i in 0..m {
                out[i] += crate::tensor::dot(&wv[i * n..(i + 1) * n], &h);
            }
            if l + 1 < n_layers {
                self.activation.apply(&mut out);
            }
            h = out;
        }
        Ok(h)
    }

    /// Register parameters as tape leaves; gradients come back in the same
    /// slot order as `params()`.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        let ids = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        BoundMlp {
            ids,
            activation: self.activation,
            n_layers: self.num_layers(),
            input_dim: self.input_dim(),
        }
    }
}

pub struct BoundMlp {
    ids: Vec<NodeId>,
    activation: Activation,
    n_layers: usize,
    input_dim: usize,
}

impl BoundMlp {
    pub fn param_ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn forward(&self, tape: &mut Tape, input: NodeId) -> Result<NodeId> {
        if tape.value(input).len() != self.input_dim {
            return Err(Error::Shape(format!(
                "mlp input dim {} != expected {}",
                tape.value(input).len(),
                self.input_dim
            )));
        }
        let mut h = input;
        for l in 0..self.n_layers {
            let z = tape.matvec(self.ids[2 * l], h)?;
            let mut out = tape.add(z, self.ids[2 * l + 1])?;
            if l + 1 < self.n_layers {
                out = match self.activation {
                    Activation::Tanh => tape.tanh(out),
                    Activation::Relu => tape.relu(out),
                    Activation::Identity => out,
                };
            }
            h = out;
        }
        Ok(h)
    }
}

pub const TIME_EMBED_DIM: usize = 3;

/// t/T scalar plus one sin/cos pair; enough to break timestep symmetry.
pub fn time_embedding(t: usize, t_max: usize) -> [f64; TIME_EMBED_DIM] {
    let frac = t as f64 / t_max as f64;
    [frac, (TAU * frac).sin(), (TAU * frac).cos()]
}

/// ε-prediction network over concat(x_t, time embedding, y).
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub mlp: Mlp,
    pub x_dim: usize,
    pub y_dim: usize,
    pub t_max: usize,
}

impl Denoiser {
    pub fn random<R: Rng>(
        x_dim: usize,
        y_dim: usize,
        hidden: &[usize],
        activation: Activation,
        t_max: usize,
        rng: &mut R,
    ) -> Result<Denoiser> {
        let mut sizes = vec![x_dim + TIME_EMBED_DIM + y_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(x_dim);
        Ok(Denoiser {
            mlp: Mlp::random(sizes, activation, rng)?,
            x_dim,
            y_dim,
            t_max,
        })
    }

    pub fn from_mlp(mlp: Mlp, x_dim: usize, y_dim: usize, t_max: usize) -> Result<Denoiser> {
        if mlp.input_dim() != x_dim + TIME_EMBED_DIM + y_dim || mlp.output_dim() != x_dim {
            return Err(Error::Shape(format!(
                "mlp sizes {:?} do not fit x_dim {} / y_dim {}",
                mlp.sizes(),
                x_dim,
                y_dim
            )));
        }
        Ok(Denoiser {
            mlp,
            x_dim,
            y_dim,
            t_max,
        })
    }

    pub fn layout_input(&self, x_t: &[f64], t: usize, y: &[f64]) -> Result<Vec<f64>> {
        if x_t.len() != self.x_dim || y.len() != self.y_dim {
            return Err(Error::Shape(format!(
                "denoiser input dims ({}, {}) != expected ({}, {})",
                x_t.len(),
                y.len(),
                self.x_dim,
                self.y_dim
            )));
        }
        if t < 1 || t > self.t_max {
            return Err(Error::Contract(format!(
                "timestep {t} outside 1..={}",
                self.t_max
            )));
        }
        let mut input = Vec::with_capacity(self.mlp.input_dim());
        input.extend_from_slice(x_t);
        input.extend_from_slice(&time_embedding(t, self.t_max));
        input.extend_from_slice(y);
        Ok(input)
    }

    /// ε-prediction without recording graph nodes.
    pub fn predict(&self, x_t: &[f64], t: usize, y: &[f64]) -> Result<Vec<f64>> {
        let input = self.layout_input(x_t, t, y)?;
        self.mlp.forward(&input)
    }

    /// ε-prediction recorded on the tape (training mode).
    pub fn predict_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundMlp,
        x_t: &[f64],
        t: usize,
        y: &[f64],
    ) -> Result<NodeId> {
        let input = self.layout_input(x_t, t, y)?;
        let input_id = tape.leaf(Tensor::vector(input));
        bound.forward(tape, input_id)
    }
}

const MLP_MAGIC: &[u8; 8] = b"PGMLP001";
const DENOISER_MAGIC: &[u8; 8] = b"PGDNZ001";

fn write_mlp<W: Write>(w: &mut W, mlp: &Mlp) -> Result<()> {
    w.write_all(MLP_MAGIC)?;
    w.write_u8(mlp.activation.tag())?;
    w.write_u32::<LittleEndian>(mlp.sizes.len() as u32)?;
    for s in &mlp.sizes {
        w.write_u64::<LittleEndian>(*s as u64)?;
    }
    for p in &mlp.params {
        for v in p.values() {
            w.write_f64::<LittleEndian>(*v)?;
        }
    }
    Ok(())
}

fn read_mlp<R: Read>(r: &mut R) -> Result<Mlp> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MLP_MAGIC {
        return Err(Error::Config("bad checkpoint magic".into()));
    }
    let activation = Activation::from_tag(r.read_u8()?)?;
    let n_sizes = r.read_u32::<LittleEndian>()? as usize;
    let mut sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        sizes.push(r.read_u64::<LittleEndian>()? as usize);
    }
    let mut mlp = Mlp::zeros(sizes, activation)?;
    for p in &mut mlp.params {
        for v in p.values_mut() {
            *v = r.read_f64::<LittleEndian>()?;
        }
    }
    Ok(mlp)
}

impl Denoiser {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(DENOISER_MAGIC)?;
        f.write_u64::<LittleEndian>(self.x_dim as u64)?;
        f.write_u64::<LittleEndian>(self.y_dim as u64)?;
        f.write_u64::<LittleEndian>(self.t_max as u64)?;
        write_mlp(&mut f, &self.mlp)
    }

    pub fn load(path: &Path) -> Result<Denoiser> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != DENOISER_MAGIC {
            return Err(Error::Config("bad checkpoint magic".into()));
        }
        let x_dim = f.read_u64::<LittleEndian>()? as usize;
        let y_dim = f.read_u64::<LittleEndian>()? as usize;
        let t_max = f.read_u64::<LittleEndian>()? as usize;
        let mlp = read_mlp(&mut f)?;
        Denoiser::from_mlp(mlp, x_dim, y_dim, t_max)
    }
}
