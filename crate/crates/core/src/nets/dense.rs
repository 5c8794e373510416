use std::fmt;
use std::str::FromStr;

use mc_autodiff::{Graph, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
    Softplus,
}

impl Activation {
    fn apply<'g>(self, x: Var<'g>) -> Var<'g> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
            Activation::Softplus => x.softplus(),
        }
    }

    fn apply_value(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Linear => v,
            Activation::Softplus => {
                if v > 0.0 {
                    v + (-v).exp().ln_1p()
                } else {
                    v.exp().ln_1p()
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
            Activation::Softplus => "softplus",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "linear" => Ok(Self::Linear),
            "softplus" => Ok(Self::Softplus),
            _ => Err(Error::Parse(format!("unknown activation `{s}`"))),
        }
    }
}

/// Fully connected layer `act(x W + b)` with `W: (in, out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Stack of dense layers. Parameters enumerate as
/// `[l0.weight, l0.bias, l1.weight, ...]`, always in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Architecture("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.rank() != 2 || l.bias.shape() != [l.output_dim()] {
                return Err(Error::Architecture(format!(
                    "layer {i}: weight {:?} and bias {:?} do not form a dense layer",
                    l.weight.shape(),
                    l.bias.shape()
                )));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Architecture(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Uniform fan-in initialisation, `U(-1/sqrt(in), 1/sqrt(in))` for weights
    /// and biases. `sizes` lists every width including input and output.
    pub fn init(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (sizes[i], sizes[i + 1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut draw = |k: usize| -> Vec<f64> {
                    (0..k).map(|_| rng.random_range(-bound..=bound)).collect()
                };
                Layer {
                    weight: Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out)).unwrap(),
                    bias: Tensor::vector(draw(fan_out)),
                    activation: if i + 1 == n { output } else { hidden },
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| Layer {
                weight: Tensor::zeros(&[sizes[i], sizes[i + 1]]),
                bias: Tensor::zeros(&[sizes[i + 1]]),
                activation: if i + 1 == n { output } else { hidden },
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn num_tensors(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.numel() + l.bias.numel())
            .sum()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("{prefix}l{i}.weight"), format!("{prefix}l{i}.bias")])
            .collect()
    }

    pub fn bind<'g>(&self, g: &'g Graph) -> Vec<Var<'g>> {
        self.params().into_iter().map(|t| g.variable(t.clone())).collect()
    }

    pub fn bind_constants<'g>(&self, g: &'g Graph) -> Vec<Var<'g>> {
        self.params().into_iter().map(|t| g.constant(t.clone())).collect()
    }

    /// Forward pass with externally supplied parameter nodes (which may be
    /// non-leaf, e.g. the result of a gradient step).
    pub fn forward<'g>(&self, params: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        if params.len() != self.num_tensors() {
            return Err(Error::Dim {
                context: "dense forward parameter count",
                expected: self.num_tensors(),
                actual: params.len(),
            });
        }
        let xs = x.shape();
        if xs.len() != 2 || xs[1] != self.input_dim() {
            return Err(Error::Dim {
                context: "dense forward input width",
                expected: self.input_dim(),
                actual: xs.last().copied().unwrap_or(0),
            });
        }
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.activation.apply(h.affine(params[2 * l], params[2 * l + 1])?);
        }
        Ok(h)
    }

    /// Graph-free forward pass on a `(n, in)` batch.
    pub fn forward_tensor(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 2 || x.cols() != self.input_dim() {
            return Err(Error::Dim {
                context: "dense forward input width",
                expected: self.input_dim(),
                actual: x.cols(),
            });
        }
        let mut h = x.clone();
        for layer in &self.layers {
            let act = layer.activation;
            h = h.matmul(&layer.weight)?.add_row(&layer.bias)?.map(|v| act.apply_value(v));
        }
        Ok(h)
    }

    pub fn same_architecture(&self, other: &DenseNet) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.shape() == b.weight.shape() && a.activation == b.activation
            })
    }

    pub fn flat(&self) -> Vec<f64> {
        self.params()
            .into_iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Dim {
                context: "flat parameter vector",
                expected: self.num_params(),
                actual: values.len(),
            });
        }
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.numel();
            p.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Replaces parameter values tensor by tensor, shapes unchanged.
    pub fn assign(&mut self, values: &[Tensor]) -> Result<()> {
        if values.len() != self.num_tensors() {
            return Err(Error::Dim {
                context: "parameter assignment",
                expected: self.num_tensors(),
                actual: values.len(),
            });
        }
        for (p, v) in self.params_mut().into_iter().zip(values) {
            p.assign(v)?;
        }
        Ok(())
    }
}

/// Target-network blending, `t <- (1 - tau) t + tau s` for every parameter.
pub fn polyak(target: &mut DenseNet, source: &DenseNet, tau: f64) -> Result<()> {
    if !target.same_architecture(source) {
        return Err(Error::Architecture(
            "polyak target and source differ in shape".into(),
        ));
    }
    for (t, s) in target.params_mut().into_iter().zip(source.params()) {
        for (tv, &sv) in t.data_mut().iter_mut().zip(s.data()) {
            *tv = (1.0 - tau) * *tv + tau * sv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_net(value: f64) -> DenseNet {
        let mut n = DenseNet::zeros(&[2, 3, 1], Activation::Relu, Activation::Linear);
        let k = n.num_params();
        n.set_flat(&vec![value; k]).unwrap();
        n
    }

    #[test]
    fn polyak_identities() {
        let src = constant_net(1.0);
        let mut t = constant_net(0.0);
        polyak(&mut t, &src, 0.0).unwrap();
        assert!(t.flat().iter().all(|&v| v == 0.0));
        polyak(&mut t, &src, 0.005).unwrap();
        assert!(t.flat().iter().all(|&v| v == 0.005));
        polyak(&mut t, &src, 1.0).unwrap();
        assert_eq!(t, src);
    }

    #[test]
    fn polyak_rejects_mismatch() {
        let mut t = constant_net(0.0);
        let s = DenseNet::zeros(&[2, 4, 1], Activation::Relu, Activation::Linear);
        assert!(polyak(&mut t, &s, 0.5).is_err());
    }

    #[test]
    fn graph_and_tensor_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::init(&[3, 5, 2], Activation::Relu, Activation::Softplus, &mut rng);
        let x = Tensor::matrix(2, 3, vec![0.1, -0.4, 0.9, 1.2, 0.3, -0.7]).unwrap();
        let g = Graph::new();
        let p = net.bind(&g);
        let y = net.forward(&p, g.constant(x.clone())).unwrap();
        assert_eq!(y.value().as_ref(), &net.forward_tensor(&x).unwrap());
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DenseNet::init(&[16, 4], Activation::Linear, Activation::Linear, &mut rng);
        assert!(net.flat().iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn rejects_unchained_layers() {
        let a = DenseNet::zeros(&[2, 3], Activation::Linear, Activation::Linear);
        let b = DenseNet::zeros(&[4, 1], Activation::Linear, Activation::Linear);
        let layers = vec![a.layers()[0].clone(), b.layers()[0].clone()];
        assert!(DenseNet::new(layers).is_err());
    }

    #[test]
    fn wrong_input_width_is_an_error() {
        let net = constant_net(0.1);
        let g = Graph::new();
        let p = net.bind(&g);
        assert!(net.forward(&p, g.constant(Tensor::zeros(&[1, 3]))).is_err());
    }
}
