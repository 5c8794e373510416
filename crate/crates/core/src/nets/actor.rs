use mc_autodiff::{Graph, Tensor, Var};
use rand::Rng;

use super::dense::{Activation, DenseNet};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    /// `scale * tanh(head(features))`
    Deterministic,
    /// Head emits `[mean, log_std]`; actions are tanh-squashed samples.
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Deterministic,
    Mean,
    Sample,
}

pub struct ActorOutput<'g> {
    pub action: Var<'g>,
    /// `(n, 1)` log-density of the squashed sample; only in sample mode of a
    /// gaussian head.
    pub log_prob: Option<Var<'g>>,
}

/// Policy `pi(s) = head(features(s))`. `features` is everything up to the
/// penultimate layer; `head` is the last layer alone.
#[derive(Clone, Debug, PartialEq)]
pub struct Actor {
    pub feature: DenseNet,
    pub head: DenseNet,
    pub kind: HeadKind,
    pub action_scale: Vec<f64>,
}

impl Actor {
    pub fn new(
        feature: DenseNet,
        head: DenseNet,
        kind: HeadKind,
        action_scale: Vec<f64>,
    ) -> Result<Self> {
        if feature.output_dim() != head.input_dim() {
            return Err(Error::Architecture(format!(
                "feature output {} does not match head input {}",
                feature.output_dim(),
                head.input_dim()
            )));
        }
        let per_action = match kind {
            HeadKind::Deterministic => 1,
            HeadKind::Gaussian => 2,
        };
        if head.output_dim() != per_action * action_scale.len() {
            return Err(Error::Architecture(format!(
                "head emits {} values for {} action dims",
                head.output_dim(),
                action_scale.len()
            )));
        }
        Ok(Self {
            feature,
            head,
            kind,
            action_scale,
        })
    }

    /// Relu feature extractor over `hidden` widths and a linear head whose
    /// initial weights are shrunk 100x.
    pub fn init(
        state_dim: usize,
        hidden: &[usize],
        action_scale: Vec<f64>,
        kind: HeadKind,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(!hidden.is_empty(), "actor needs a feature layer");
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        let feature = DenseNet::init(&sizes, Activation::Relu, Activation::Relu, rng);
        let outputs = match kind {
            HeadKind::Deterministic => action_scale.len(),
            HeadKind::Gaussian => 2 * action_scale.len(),
        };
        let mut head = DenseNet::init(
            &[*hidden.last().unwrap(), outputs],
            Activation::Linear,
            Activation::Linear,
            rng,
        );
        for p in head.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v *= 0.01);
        }
        Self::new(feature, head, kind, action_scale).expect("consistent sizes")
    }

    pub fn state_dim(&self) -> usize {
        self.feature.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action_scale.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature.output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.feature.num_params() + self.head.num_params()
    }

    pub fn num_tensors(&self) -> usize {
        self.feature.num_tensors() + self.head.num_tensors()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.feature.params();
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.feature.params_mut();
        p.extend(self.head.params_mut());
        p
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut names = self.feature.param_names("feature.");
        names.extend(self.head.param_names("head."));
        names.into_iter().zip(self.params()).collect()
    }

    pub fn bind<'g>(&self, g: &'g Graph) -> Vec<Var<'g>> {
        self.params().into_iter().map(|t| g.variable(t.clone())).collect()
    }

    pub fn bind_constants<'g>(&self, g: &'g Graph) -> Vec<Var<'g>> {
        self.params().into_iter().map(|t| g.constant(t.clone())).collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.feature.flat();
        v.extend(self.head.flat());
        v
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Dim {
                context: "actor flat parameters",
                expected: self.num_params(),
                actual: values.len(),
            });
        }
        let k = self.feature.num_params();
        self.feature.set_flat(&values[..k])?;
        self.head.set_flat(&values[k..])
    }

    pub fn assign(&mut self, values: &[Tensor]) -> Result<()> {
        let k = self.feature.num_tensors();
        if values.len() != self.num_tensors() {
            return Err(Error::Dim {
                context: "actor parameter assignment",
                expected: self.num_tensors(),
                actual: values.len(),
            });
        }
        self.feature.assign(&values[..k])?;
        self.head.assign(&values[k..])
    }

    fn split<'a, 'g>(&self, params: &'a [Var<'g>]) -> Result<(&'a [Var<'g>], &'a [Var<'g>])> {
        if params.len() != self.num_tensors() {
            return Err(Error::Dim {
                context: "actor parameter count",
                expected: self.num_tensors(),
                actual: params.len(),
            });
        }
        Ok(params.split_at(self.feature.num_tensors()))
    }

    /// Penultimate-layer output `features(s)`, shape `(n, feature_dim)`.
    pub fn features<'g>(&self, params: &[Var<'g>], states: Var<'g>) -> Result<Var<'g>> {
        let (fp, _) = self.split(params)?;
        self.feature.forward(fp, states)
    }

    fn scale_actions<'g>(&self, squashed: Var<'g>) -> Result<Var<'g>> {
        if self.action_scale.iter().all(|&s| s == 1.0) {
            return Ok(squashed);
        }
        let n = squashed.shape()[0];
        let scale = Tensor::vector(self.action_scale.clone()).broadcast_rows(n)?;
        Ok(squashed.mul(squashed.graph().constant(scale))?)
    }

    /// Batched policy evaluation. `noise` is `(n, action_dim)` standard normal
    /// draws, required in sample mode.
    pub fn forward<'g>(
        &self,
        params: &[Var<'g>],
        states: Var<'g>,
        mode: ActMode,
        noise: Option<&Tensor>,
    ) -> Result<ActorOutput<'g>> {
        if mode == ActMode::Sample && noise.is_none() {
            return Err(Error::MissingNoise);
        }
        let (fp, hp) = self.split(params)?;
        let feats = self.feature.forward(fp, states)?;
        let out = self.head.forward(hp, feats)?;
        let d = self.action_dim();
        match (self.kind, mode) {
            (HeadKind::Deterministic, _) => Ok(ActorOutput {
                action: self.scale_actions(out.tanh())?,
                log_prob: None,
            }),
            (HeadKind::Gaussian, ActMode::Deterministic | ActMode::Mean) => Ok(ActorOutput {
                action: self.scale_actions(out.slice_cols(0, d)?.tanh())?,
                log_prob: None,
            }),
            (HeadKind::Gaussian, ActMode::Sample) => {
                let noise = noise.expect("checked above");
                let n = out.shape()[0];
                if noise.shape() != [n, d] {
                    return Err(Error::Dim {
                        context: "policy noise",
                        expected: n * d,
                        actual: noise.numel(),
                    });
                }
                let mean = out.slice_cols(0, d)?;
                let log_std = out.slice_cols(d, d)?.clamp(LOG_STD_MIN, LOG_STD_MAX);
                let pre = Var::gaussian_sample(mean, log_std, noise)?;
                let base = pre.gaussian_log_density(mean, log_std)?.sum_cols()?;
                // log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))
                let log_jac = pre
                    .scale(-2.0)
                    .softplus()
                    .add(pre)?
                    .scale_shift(-2.0, 2.0 * std::f64::consts::LN_2)
                    .sum_cols()?;
                let log_scale: f64 = self.action_scale.iter().map(|s| s.ln()).sum();
                let log_prob = base.sub(log_jac)?.shift(-log_scale);
                Ok(ActorOutput {
                    action: self.scale_actions(pre.tanh())?,
                    log_prob: Some(log_prob),
                })
            }
        }
    }

    /// Single-state action; returns the action and, in gaussian sample mode,
    /// its log-density.
    pub fn act(
        &self,
        state: &[f64],
        mode: ActMode,
        noise: Option<&[f64]>,
    ) -> Result<(Vec<f64>, Option<f64>)> {
        if state.len() != self.state_dim() {
            return Err(Error::Dim {
                context: "actor state",
                expected: self.state_dim(),
                actual: state.len(),
            });
        }
        let g = Graph::new();
        let params = self.bind_constants(&g);
        let s = g.constant(Tensor::matrix(1, state.len(), state.to_vec())?);
        let noise = noise
            .map(|n| Tensor::matrix(1, n.len(), n.to_vec()))
            .transpose()?;
        let out = self.forward(&params, s, mode, noise.as_ref())?;
        let action = out.action.value().data().to_vec();
        Ok((action, out.log_prob.map(|lp| lp.item())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_actor(kind: HeadKind) -> Actor {
        let feature = DenseNet::zeros(&[3, 4], Activation::Relu, Activation::Relu);
        let outs = if kind == HeadKind::Gaussian { 4 } else { 2 };
        let head = DenseNet::zeros(&[4, outs], Activation::Linear, Activation::Linear);
        Actor::new(feature, head, kind, vec![2.0, 0.5]).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_action() {
        let a = zero_actor(HeadKind::Deterministic);
        let (act, lp) = a.act(&[1.0, -2.0, 0.3], ActMode::Deterministic, None).unwrap();
        assert_eq!(act, vec![0.0, 0.0]);
        assert!(lp.is_none());
    }

    #[test]
    fn zero_weight_features_are_zero() {
        let a = zero_actor(HeadKind::Deterministic);
        let g = Graph::new();
        let p = a.bind(&g);
        let s = g.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap());
        let f = a.features(&p, s).unwrap();
        assert_eq!(f.value().as_ref(), &Tensor::zeros(&[2, 4]));
    }

    #[test]
    fn identity_feature_layer_passes_states_through() {
        let mut feature = DenseNet::zeros(&[3, 3], Activation::Linear, Activation::Linear);
        feature.layers_mut()[0].weight =
            Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let head = DenseNet::zeros(&[3, 1], Activation::Linear, Activation::Linear);
        let a = Actor::new(feature, head, HeadKind::Deterministic, vec![1.0]).unwrap();
        let g = Graph::new();
        let p = a.bind(&g);
        let states = Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 3.0, 0.0, -0.25]).unwrap();
        let f = a.features(&p, g.constant(states.clone())).unwrap();
        assert_eq!(f.value().as_ref(), &states);
    }

    #[test]
    fn sample_mode_needs_noise() {
        let a = zero_actor(HeadKind::Gaussian);
        assert!(matches!(
            a.act(&[0.0; 3], ActMode::Sample, None),
            Err(Error::MissingNoise)
        ));
    }

    #[test]
    fn zero_noise_sample_equals_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Actor::init(3, &[8, 8], vec![1.5, 1.0], HeadKind::Gaussian, &mut rng);
        let s = [0.3, -0.7, 1.1];
        let (mean, _) = a.act(&s, ActMode::Mean, None).unwrap();
        let (sample, lp) = a.act(&s, ActMode::Sample, Some(&[0.0, 0.0])).unwrap();
        assert_eq!(mean, sample);
        assert!(lp.unwrap().is_finite());
    }

    #[test]
    fn deterministic_actions_within_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut a = Actor::init(2, &[4], vec![0.5], HeadKind::Deterministic, &mut rng);
        for p in a.head.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 50.0);
        }
        let (act, _) = a.act(&[3.0, 3.0], ActMode::Deterministic, None).unwrap();
        assert!(act[0].abs() <= 0.5);
    }
}
