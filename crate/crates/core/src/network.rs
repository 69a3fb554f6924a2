//! Small dense feed-forward networks with hand-written backpropagation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Tanh,
    Softplus,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Tanh => z.tanh(),
            Activation::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Softplus => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Activation::Linear),
            "tanh" => Ok(Activation::Tanh),
            "softplus" => Ok(Activation::Softplus),
            other => Err(Error::invalid(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Hidden-layer widths and activations; the output width comes from the
/// problem.
///
/// Text form: comma-separated `width:activation` entries for hidden layers
/// followed by the output activation, e.g. `16:tanh,8:softplus,linear`.
/// A bare `linear` is the one-layer affine map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub hidden: Vec<(usize, Activation)>,
    pub output: Activation,
}

impl Architecture {
    pub fn affine() -> Self {
        Architecture {
            hidden: Vec::new(),
            output: Activation::Linear,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        let (last, hidden) = parts.split_last().ok_or_else(|| Error::invalid("empty architecture"))?;
        let hidden = hidden
            .iter()
            .map(|p| {
                let (w, a) = p
                    .split_once(':')
                    .ok_or_else(|| Error::invalid(format!("hidden layer '{p}' must be width:activation")))?;
                let width: usize = w
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad layer width '{w}'")))?;
                if width == 0 {
                    return Err(Error::invalid("layer width must be positive"));
                }
                Ok((width, a.parse()?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Architecture {
            hidden,
            output: last.parse()?,
        })
    }

    pub fn is_affine(&self) -> bool {
        self.hidden.is_empty() && self.output == Activation::Linear
    }

    /// Uniform `[-r, r]` weights with `r = fan_in^{-1/2}`, zero biases.
    pub fn init(&self, input: usize, output: usize, rng: &mut StreamRng) -> DenseNetwork {
        let mut layers = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = input;
        let shapes = self
            .hidden
            .iter()
            .copied()
            .chain(std::iter::once((output, self.output)));
        for (width, activation) in shapes {
            let r = (fan_in as f64).powf(-0.5);
            layers.push(Layer {
                weight: DMatrix::from_fn(width, fan_in, |_, _| rng.gen_range(-r..=r)),
                bias: DVector::zeros(width),
                activation,
            });
            fan_in = width;
        }
        DenseNetwork { layers }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (w, a) in &self.hidden {
            write!(f, "{w}:{},", a.as_str())?;
        }
        f.write_str(self.output.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<Layer>,
}

/// Per-layer inputs and pre-activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<DMatrix<f64>>,
    pre_activations: Vec<DMatrix<f64>>,
    pub output: DMatrix<f64>,
}

impl DenseNetwork {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.nrows() != l.bias.len() {
                return Err(Error::invalid(format!("layer {i}: weight rows differ from bias length")));
            }
            if i > 0 && layers[i - 1].weight.nrows() != l.weight.ncols() {
                return Err(Error::invalid(format!("layer {i}: input width does not chain")));
            }
        }
        Ok(DenseNetwork { layers })
    }

    /// One linear layer `x -> W x + b`.
    pub fn affine(weight: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        Self::new(vec![Layer {
            weight,
            bias,
            activation: Activation::Linear,
        }])
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weight.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn is_affine(&self) -> bool {
        self.layers.len() == 1 && self.layers[0].activation == Activation::Linear
    }

    /// Parameters as one vector: per layer, weight (column-major) then bias.
    pub fn flatten(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        DVector::from_vec(out)
    }

    /// Same architecture with parameters read from `theta`.
    pub fn with_params(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                theta.len()
            )));
        }
        let mut offset = 0;
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (r, c) = l.weight.shape();
                let weight = DMatrix::from_column_slice(r, c, &theta[offset..offset + r * c]);
                offset += r * c;
                let bias = DVector::from_column_slice(&theta[offset..offset + r]);
                offset += r;
                Layer {
                    weight,
                    bias,
                    activation: l.activation,
                }
            })
            .collect();
        Ok(DenseNetwork { layers })
    }

    /// Sum of squared weight entries over all layers.
    pub fn weight_norm_sq(&self) -> f64 {
        self.layers.iter().map(|l| l.weight.norm_squared()).sum()
    }

    pub fn bias_norm_sq(&self) -> f64 {
        self.layers.iter().map(|l| l.bias.norm_squared()).sum()
    }

    /// Applies the network to every column of `x`.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: &DMatrix<f64>) -> Result<ForwardCache> {
        if x.nrows() != self.input_dim() {
            return Err(Error::invalid(format!(
                "network expects inputs of length {}, got {}",
                self.input_dim(),
                x.nrows()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        for l in &self.layers {
            let mut z = &l.weight * &current;
            for mut col in z.column_iter_mut() {
                col += &l.bias;
            }
            let a = if l.activation == Activation::Linear {
                z.clone()
            } else {
                z.map(|v| l.activation.apply(v))
            };
            inputs.push(current);
            pre_activations.push(z);
            current = a;
        }
        Ok(ForwardCache {
            inputs,
            pre_activations,
            output: current,
        })
    }

    /// Reverse pass: given `dL/d(output)`, returns the flattened parameter
    /// gradient (same layout as [`flatten`](Self::flatten)) and `dL/d(input)`.
    pub fn backward(&self, cache: &ForwardCache, d_output: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.layers.len());
        let mut delta = d_output.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            if l.activation != Activation::Linear {
                delta.zip_apply(&cache.pre_activations[i], |d, z| *d *= l.activation.derivative(z));
            }
            let gw = &delta * cache.inputs[i].transpose();
            let gb = delta.column_sum();
            delta = l.weight.transpose() * &delta;
            grads.push((gw, gb));
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.num_params());
        for (gw, gb) in grads {
            flat.extend_from_slice(gw.as_slice());
            flat.extend_from_slice(gb.as_slice());
        }
        (DVector::from_vec(flat), delta)
    }

    /// Gradient of `½‖W‖²` over all layers, laid out like [`flatten`](Self::flatten),
    /// scaled per block: `weight_scale * W` and `bias_scale * b`.
    pub fn penalty_gradient(&self, weight_scale: f64, bias_scale: f64) -> DVector<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            flat.extend(l.weight.iter().map(|w| weight_scale * w));
            flat.extend(l.bias.iter().map(|b| bias_scale * b));
        }
        DVector::from_vec(flat)
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    use super::*;
    use crate::rng;

    #[test]
    fn affine_forward_is_wx_plus_b() {
        let w = dmatrix![1.0, 2.0; -1.0, 0.5; 0.0, 3.0];
        let b = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let net = DenseNetwork::affine(w.clone(), b.clone()).unwrap();
        let x = dmatrix![1.0, 0.0; 2.0, -1.0];
        let out = net.forward(&x).unwrap();
        for k in 0..2 {
            let expect = &w * x.column(k) + &b;
            assert_eq!(out.column(k).into_owned(), expect);
        }
    }

    #[test]
    fn chain_is_checked() {
        let l1 = Layer {
            weight: DMatrix::zeros(3, 2),
            bias: DVector::zeros(3),
            activation: Activation::Tanh,
        };
        let l2 = Layer {
            weight: DMatrix::zeros(1, 4),
            bias: DVector::zeros(1),
            activation: Activation::Linear,
        };
        assert!(DenseNetwork::new(vec![l1, l2]).is_err());
    }

    #[test]
    fn architecture_text() {
        let a = Architecture::parse("16:tanh, 8:softplus,linear").unwrap();
        assert_eq!(a.hidden, vec![(16, Activation::Tanh), (8, Activation::Softplus)]);
        assert_eq!(a.to_string(), "16:tanh,8:softplus,linear");
        assert!(Architecture::parse("linear").unwrap().is_affine());
        assert!(Architecture::parse("4:relu,linear").is_err());
        assert!(Architecture::parse("tanh,linear").is_err());
        let net = a.init(5, 3, &mut rng::stream(1, 0));
        assert_eq!((net.input_dim(), net.output_dim()), (5, 3));
        assert!(net.layers()[0].weight.amax() <= 5f64.powf(-0.5));
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(Activation::Softplus.apply(800.0), 800.0);
        assert!(Activation::Softplus.apply(-800.0) >= 0.0);
        assert!((Activation::Softplus.derivative(0.0) - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn flatten_round_trips(seed in any::<u64>(), depth in 0usize..3) {
            let arch = Architecture {
                hidden: (0..depth).map(|i| (3 + i, Activation::Tanh)).collect(),
                output: Activation::Softplus,
            };
            let net = arch.init(4, 2, &mut rng::stream(seed, 0));
            let theta = net.flatten();
            let back = net.with_params(theta.as_slice()).unwrap();
            prop_assert_eq!(&back, &net);
            prop_assert_eq!(
                back.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                theta.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
