//! Small neural-network toolkit on top of candle with seeded initialization.
//!
//! Every parameter is created from a caller-owned ChaCha stream, so two runs
//! with the same seed start from bit-identical weights.

use crate::error::{Error, Result};
use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Named trainable variables.
#[derive(Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    pub dtype: DType,
    pub device: Device,
}

pub enum Init {
    Zeros,
    Ones,
    Uniform(f64),
    Normal(f64),
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn var(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform(a) => (0..n).map(|_| rng.random_range(-a..=a)).collect(),
            Init::Normal(s) => (0..n)
                .map(|_| s * rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect(),
        };
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let v = Var::from_tensor(&t)?;
        let out = v.as_tensor().clone();
        if self.vars.insert(name.to_string(), v).is_some() {
            return Err(Error::invalid(format!("duplicate parameter {name}")));
        }
        Ok(out)
    }

    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Result<Linear> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weight = self.var(&format!("{name}.weight"), &[d_out, d_in], Init::Uniform(bound), rng)?;
        let bias = self.var(&format!("{name}.bias"), &[d_out], Init::Uniform(bound), rng)?;
        Ok(Linear { weight, bias: Some(bias) })
    }

    pub fn layer_norm(&mut self, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gamma: self.var(&format!("{name}.gamma"), &[dim], Init::Ones, rng)?,
            beta: self.var(&format!("{name}.beta"), &[dim], Init::Zeros, rng)?,
        })
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.vars.keys()
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn vars_where(&self, keep: impl Fn(&str) -> bool) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| keep(k))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn parameter_count(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites every variable from `tensors` (matched by name and shape).
    pub fn load(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Incompatible(format!("missing parameter {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Incompatible(format!(
                    "parameter {name} has shape {:?}, checkpoint {:?}",
                    var.dims(),
                    t.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    /// Applies `x W^T + b` over the last dimension of an input of any rank.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().unwrap();
        let rows = x.elem_count() / d_in;
        let y = x.reshape((rows, d_in))?.matmul(&self.weight.t()?)?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        };
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.weight.dim(0)?;
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// Inverted dropout with a mask drawn from `rng`; identity when `p == 0`.
pub fn dropout(x: &Tensor, p: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - p;
    let mask: Vec<f64> = (0..x.elem_count())
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    Ok((x * mask)?)
}

/// Gated recurrent unit cell (PyTorch gate layout: reset, update, new).
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input: Linear,
    pub hidden: Linear,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            input: store.linear(&format!("{name}.ih"), d_in, 3 * hidden, rng)?,
            hidden: store.linear(&format!("{name}.hh"), hidden, 3 * hidden, rng)?,
            hidden_dim: hidden,
        })
    }

    /// Gate-wise views of both projections, made contiguous once per sequence.
    fn gates(&self) -> Result<[Linear; 6]> {
        let hd = self.hidden_dim;
        let part = |l: &Linear, k: usize| -> Result<Linear> {
            Ok(Linear {
                weight: l.weight.narrow(0, k * hd, hd)?.contiguous()?,
                bias: match &l.bias {
                    Some(b) => Some(b.narrow(0, k * hd, hd)?.contiguous()?),
                    None => None,
                },
            })
        };
        Ok([
            part(&self.input, 0)?,
            part(&self.input, 1)?,
            part(&self.input, 2)?,
            part(&self.hidden, 0)?,
            part(&self.hidden, 1)?,
            part(&self.hidden, 2)?,
        ])
    }

    /// Runs over per-step inputs (`[B, D]` each), returning every hidden state.
    /// Steps are taken separately so no step slices a large graph tensor.
    pub fn run_steps(&self, xs: &[Tensor], h0: &Tensor, reverse: bool) -> Result<Vec<Tensor>> {
        let [ir, iz, inn, hr, hz, hn] = self.gates()?;
        let mut h = h0.clone();
        let mut outs = vec![h0.clone(); xs.len()];
        let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
        for t in order {
            let x = &xs[t];
            let r = sigmoid(&(ir.forward(x)? + hr.forward(&h)?)?)?;
            let z = sigmoid(&(iz.forward(x)? + hz.forward(&h)?)?)?;
            let n = (inn.forward(x)? + (r * hn.forward(&h)?)?)?.tanh()?;
            // h' = n + z * (h - n)
            h = (&n + (z * (&h - &n)?)?)?;
            outs[t] = h.clone();
        }
        Ok(outs)
    }

    /// Runs over `[B, T, D]`, returning every hidden state `[B, T, H]`.
    pub fn run(&self, xs: &Tensor, h0: &Tensor, reverse: bool) -> Result<Tensor> {
        let steps = split_steps(xs)?;
        Ok(Tensor::stack(&self.run_steps(&steps, h0, reverse)?, 1)?)
    }
}

/// `[B, T, D]` into `T` tensors of `[B, D]`.
pub fn split_steps(xs: &Tensor) -> Result<Vec<Tensor>> {
    let t_len = xs.dim(1)?;
    (0..t_len).map(|t| Ok(xs.narrow(1, t, 1)?.squeeze(1)?)).collect()
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

pub fn tensor_from_rows(rows: &[Vec<f32>], dtype: DType) -> Result<Tensor> {
    let n = rows.len();
    let d = rows.first().map(|r| r.len()).unwrap_or(0);
    let flat: Vec<f32> = rows.iter().flatten().copied().collect();
    Ok(Tensor::from_vec(flat, (n, d), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Adam (AdamW with zero weight decay) over the given variables.
pub fn adam(vars: Vec<Var>, lr: f64) -> Result<candle_nn::AdamW> {
    use candle_nn::Optimizer;
    Ok(candle_nn::AdamW::new(
        vars,
        candle_nn::ParamsAdamW {
            lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn seeded_init_is_reproducible() {
        let mk = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut s = ParamStore::new(DType::F32);
            let l = s.linear("a", 3, 4, &mut rng).unwrap();
            l.weight.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        };
        assert_eq!(mk(), mk());
    }

    #[test]
    fn linear_handles_rank3() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new(DType::F64);
        let l = s.linear("l", 3, 2, &mut rng).unwrap();
        let x = Tensor::ones((2, 5, 3), DType::F64, &Device::Cpu).unwrap();
        assert_eq!(l.forward(&x).unwrap().dims(), &[2, 5, 2]);
    }

    #[test]
    fn gru_zero_weights_zero_input_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new(DType::F64);
        let g = GruCell::new(&mut s, "g", 3, 4, &mut rng).unwrap();
        for v in s.all_vars() {
            v.set(&v.zeros_like().unwrap()).unwrap();
        }
        let x = Tensor::zeros((2, 6, 3), DType::F64, &Device::Cpu).unwrap();
        let h0 = Tensor::zeros((2, 4), DType::F64, &Device::Cpu).unwrap();
        let out = g.run(&x, &h0, false).unwrap();
        let m = out.abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(m, 0.0);
    }
}
