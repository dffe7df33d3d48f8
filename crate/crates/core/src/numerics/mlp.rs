use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ops::{matmul, matmul_nt};
use super::tensor::{DType, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer, `y = x·Wᵀ + b` with `W` stored `[out×in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn in_dim(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }
}

/// Stack of linear layers with an activation between consecutive layers and
/// none after the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
    activation: Activation,
}

/// Everything the backward pass needs from a forward call.
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl MlpGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
        out
    }
}

impl Mlp {
    /// Build from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Linear>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("an Mlp needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.rank() != 2 || l.bias.dims() != [l.out_dim()] {
                return Err(Error::Dimension(format!(
                    "layer {i}: weight {:?} and bias {:?} disagree",
                    l.weight.dims(),
                    l.bias.dims()
                )));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Dimension(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Mlp { layers, activation })
    }

    /// Uniform `[-a, a]` weights with `a = sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn xavier<R: Rng>(
        sizes: &[usize],
        activation: Activation,
        dtype: DType,
        rng: &mut R,
    ) -> Result<Self> {
        check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-a..=a))
                    .collect();
                Linear {
                    weight: Tensor::from_parts(vec![fan_out, fan_in], data, dtype),
                    bias: Tensor::zeros(&[fan_out], dtype),
                }
            })
            .collect();
        Mlp::from_layers(layers, activation)
    }

    pub fn zeros(sizes: &[usize], activation: Activation, dtype: DType) -> Result<Self> {
        check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Linear {
                weight: Tensor::zeros(&[w[1], w[0]], dtype),
                bias: Tensor::zeros(&[w[1]], dtype),
            })
            .collect();
        Mlp::from_layers(layers, activation)
    }

    /// `depth` square identity layers of width `dim`.
    pub fn identity(dim: usize, depth: usize, activation: Activation, dtype: DType) -> Result<Self> {
        if dim == 0 || depth == 0 {
            return Err(Error::Dimension("identity Mlp needs dim, depth >= 1".into()));
        }
        let layers = (0..depth)
            .map(|_| Linear {
                weight: Tensor::identity(dim, dtype),
                bias: Tensor::zeros(&[dim], dtype),
            })
            .collect();
        Mlp::from_layers(layers, activation)
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn dtype(&self) -> DType {
        self.layers[0].weight.dtype()
    }

    pub fn to_dtype(&self, dtype: DType) -> Mlp {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    weight: l.weight.to_dtype(dtype),
                    bias: l.bias.to_dtype(dtype),
                })
                .collect(),
            activation: self.activation,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Forward pass over a batch of rows `[B×in]`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, MlpCache)> {
        x.expect_rank(2)?;
        if x.dims()[1] != self.in_dim() {
            return Err(Error::Dimension(format!(
                "Mlp expects {} input columns, got {:?}",
                self.in_dim(),
                x.dims()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = matmul_nt(&h, &layer.weight)?;
            let b = layer.bias.data();
            let cols = layer.out_dim();
            let dt = z.dtype();
            for r in 0..z.dims()[0] {
                for (v, &bv) in z.row_mut(r).iter_mut().zip(b) {
                    *v = dt.round(*v + bv);
                }
            }
            debug_assert_eq!(z.dims()[1], cols);
            let mut a = z.clone();
            if i != last {
                let act = self.activation;
                a.map_in_place(|v| act.apply(v));
            }
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    /// Exact gradients of the cached forward pass given `dy = ∂ℓ/∂y`.
    pub fn backward(&self, cache: &MlpCache, dy: &Tensor) -> Result<(Tensor, MlpGrads)> {
        if cache.inputs.len() != self.layers.len() || cache.pre.len() != self.layers.len() {
            return Err(Error::Contract(format!(
                "cache has {} layers, Mlp has {}",
                cache.inputs.len(),
                self.layers.len()
            )));
        }
        for (i, (layer, (inp, z))) in self
            .layers
            .iter()
            .zip(cache.inputs.iter().zip(&cache.pre))
            .enumerate()
        {
            if inp.dims().get(1) != Some(&layer.in_dim()) || z.dims().get(1) != Some(&layer.out_dim())
            {
                return Err(Error::Contract(format!(
                    "stale cache: layer {i} shapes {:?}/{:?} do not match weight {:?}",
                    inp.dims(),
                    z.dims(),
                    layer.weight.dims()
                )));
            }
        }
        let last = self.layers.len() - 1;
        if dy.dims() != cache.pre[last].dims() {
            return Err(Error::Dimension(format!(
                "dy {:?} does not match output {:?}",
                dy.dims(),
                cache.pre[last].dims()
            )));
        }

        let mut weights = vec![None; self.layers.len()];
        let mut biases = vec![None; self.layers.len()];
        let mut grad = dy.clone();
        for i in (0..self.layers.len()).rev() {
            if i != last {
                // grad currently holds ∂ℓ/∂a_i; turn it into ∂ℓ/∂z_i.
                let z = cache.pre[i].data();
                let act = self.activation;
                let g: Vec<f64> = grad
                    .data()
                    .iter()
                    .zip(z)
                    .map(|(&g, &zv)| g * act.derivative(zv))
                    .collect();
                grad = Tensor::from_parts(grad.dims().to_vec(), g, grad.dtype());
            }
            let layer = &self.layers[i];
            let dz_t = super::ops::transpose(&grad)?;
            weights[i] = Some(matmul(&dz_t, &cache.inputs[i])?.to_dtype(layer.weight.dtype()));
            let mut db = vec![0.0; layer.out_dim()];
            for r in 0..grad.dims()[0] {
                for (acc, &v) in db.iter_mut().zip(grad.row(r)) {
                    *acc += v;
                }
            }
            biases[i] = Some(Tensor::from_parts(
                vec![layer.out_dim()],
                db,
                layer.bias.dtype(),
            ));
            grad = matmul(&grad, &layer.weight)?;
        }
        Ok((
            grad,
            MlpGrads {
                weights: weights.into_iter().map(Option::unwrap).collect(),
                biases: biases.into_iter().map(Option::unwrap).collect(),
            },
        ))
    }

    /// Plain gradient-descent step: `θ ← θ − lr·∇θ`.
    pub fn apply_gradients(&mut self, grads: &MlpGrads, lr: f64) -> Result<()> {
        if grads.weights.len() != self.layers.len() {
            return Err(Error::Contract("gradient/layer count mismatch".into()));
        }
        for (layer, (gw, gb)) in self
            .layers
            .iter_mut()
            .zip(grads.weights.iter().zip(&grads.biases))
        {
            if gw.dims() != layer.weight.dims() || gb.dims() != layer.bias.dims() {
                return Err(Error::Contract("gradient shapes do not match parameters".into()));
            }
            let w = gw.data().to_vec();
            let mut i = 0;
            layer.weight.map_in_place(|v| {
                let out = v - lr * w[i];
                i += 1;
                out
            });
            let b = gb.data().to_vec();
            let mut j = 0;
            layer.bias.map_in_place(|v| {
                let out = v - lr * b[j];
                j += 1;
                out
            });
        }
        Ok(())
    }

    /// All parameters flattened as `[W0, b0, W1, b1, ...]`.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight = Tensor::from_parts(
                l.weight.dims().to_vec(),
                params[off..off + nw].to_vec(),
                l.weight.dtype(),
            );
            off += nw;
            let nb = l.bias.len();
            l.bias = Tensor::from_parts(
                l.bias.dims().to_vec(),
                params[off..off + nb].to_vec(),
                l.bias.dtype(),
            );
            off += nb;
        }
        Ok(())
    }

    /// Names matching the order of [`Mlp::params_flat`].
    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_params());
        for (i, l) in self.layers.iter().enumerate() {
            let (o, n) = (l.out_dim(), l.in_dim());
            for r in 0..o {
                for c in 0..n {
                    out.push(format!("{prefix}{i}.w[{r},{c}]"));
                }
            }
            for r in 0..o {
                out.push(format!("{prefix}{i}.b[{r}]"));
            }
        }
        out
    }

    /// Smallest |pre-activation| over hidden layers for input `x`. Gradient
    /// checks use this to keep fixtures away from the ReLU kink.
    pub fn min_hidden_preactivation(&self, x: &Tensor) -> Result<f64> {
        let (_, cache) = self.forward(x)?;
        let last = self.layers.len() - 1;
        Ok(cache.pre[..last]
            .iter()
            .flat_map(|z| z.data().iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min))
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::Dimension(format!(
            "layer sizes must list at least two positive widths, got {sizes:?}"
        )));
    }
    Ok(())
}
