use std::fmt;
use std::str::FromStr;

use mc_autodiff::{Graph, Tensor, Var};
use rand::Rng;

use super::actor::Actor;
use super::dense::{Activation, DenseNet};
use crate::error::{Error, Result};

pub const META_HIDDEN: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetaVariant {
    /// `mean_i f(features(s_i))`
    Feature,
    /// `mean_i f(concat(features(s_i), s_i, a_i))`
    FeatureStateAction,
    /// `sum_j softplus(w_j) |phi_j|`
    ParamReg,
}

impl fmt::Display for MetaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetaVariant::Feature => "feature",
            MetaVariant::FeatureStateAction => "feature-state-action",
            MetaVariant::ParamReg => "param-reg",
        })
    }
}

impl FromStr for MetaVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature" => Ok(MetaVariant::Feature),
            "feature-state-action" => Ok(MetaVariant::FeatureStateAction),
            "param-reg" => Ok(MetaVariant::ParamReg),
            other => Err(Error::Parse(format!("unknown meta-critic variant `{other}`"))),
        }
    }
}

/// The learned auxiliary loss `h_omega`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaCriticNet {
    pub variant: MetaVariant,
    /// Used by the two network variants.
    pub net: Option<DenseNet>,
    /// Raw regularizer weights, one tensor per actor parameter tensor; the
    /// effective weight is `softplus(raw)`.
    pub reg: Vec<Tensor>,
}

/// Inverse of softplus for positive `y`.
pub fn softplus_inverse(y: f64) -> f64 {
    assert!(y > 0.0, "softplus inverse needs a positive argument");
    // ln(e^y - 1) = y + ln(1 - e^-y)
    y + (-(-y).exp()).ln_1p()
}

impl MetaCriticNet {
    pub fn feature(actor: &Actor, hidden: usize, rng: &mut impl Rng) -> Self {
        Self::with_input(MetaVariant::Feature, actor.feature_dim(), hidden, rng)
    }

    pub fn feature_state_action(actor: &Actor, hidden: usize, rng: &mut impl Rng) -> Self {
        let input = actor.feature_dim() + actor.state_dim() + actor.action_dim();
        Self::with_input(MetaVariant::FeatureStateAction, input, hidden, rng)
    }

    fn with_input(variant: MetaVariant, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let net = DenseNet::init(
            &[input, hidden, hidden, 1],
            Activation::Relu,
            Activation::Softplus,
            rng,
        );
        Self {
            variant,
            net: Some(net),
            reg: Vec::new(),
        }
    }

    /// Regularizer with every effective weight equal to `weight`.
    pub fn param_reg(actor: &Actor, weight: f64) -> Self {
        let raw = softplus_inverse(weight);
        Self {
            variant: MetaVariant::ParamReg,
            net: None,
            reg: actor
                .params()
                .into_iter()
                .map(|p| Tensor::full(p.shape(), raw))
                .collect(),
        }
    }

    pub fn init(variant: MetaVariant, actor: &Actor, hidden: usize, reg_weight: f64, rng: &mut impl Rng) -> Self {
        match variant {
            MetaVariant::Feature => Self::feature(actor, hidden, rng),
            MetaVariant::FeatureStateAction => Self::feature_state_action(actor, hidden, rng),
            MetaVariant::ParamReg => Self::param_reg(actor, reg_weight),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match &self.net {
            Some(net) => net.params(),
            None => self.reg.iter().collect(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match &mut self.net {
            Some(net) => net.params_mut(),
            None => self.reg.iter_mut().collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    pub fn bind<'g>(&self, g: &'g Graph) -> Vec<Var<'g>> {
        self.params().into_iter().map(|t| g.variable(t.clone())).collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.params().into_iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Dim {
                context: "meta-critic flat parameters",
                expected: self.num_params(),
                actual: values.len(),
            });
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.numel();
            p.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `h_omega(batch; phi)`. `omega` binds `self.params()`, `phi` binds the
    /// actor's parameters. `actions` is required by the state-action variant.
    pub fn loss<'g>(
        &self,
        omega: &[Var<'g>],
        actor: &Actor,
        phi: &[Var<'g>],
        states: Var<'g>,
        actions: Option<Var<'g>>,
    ) -> Result<Var<'g>> {
        if states.shape()[0] == 0 {
            return Err(Error::EmptyBatch);
        }
        match self.variant {
            MetaVariant::Feature => {
                let net = self.net.as_ref().expect("feature variant has a net");
                let feats = actor.features(phi, states)?;
                Ok(net.forward(omega, feats)?.mean())
            }
            MetaVariant::FeatureStateAction => {
                let net = self.net.as_ref().expect("state-action variant has a net");
                let actions = actions.ok_or_else(|| {
                    Error::Config("state-action meta-critic needs batch actions".into())
                })?;
                let feats = actor.features(phi, states)?;
                let x = states.graph().concat_cols(&[feats, states, actions])?;
                Ok(net.forward(omega, x)?.mean())
            }
            MetaVariant::ParamReg => {
                if omega.len() != phi.len() {
                    return Err(Error::Dim {
                        context: "regularizer weights",
                        expected: phi.len(),
                        actual: omega.len(),
                    });
                }
                let mut total: Option<Var<'g>> = None;
                for (w, p) in omega.iter().zip(phi) {
                    let term = w.softplus().mul(p.abs())?.sum();
                    total = Some(match total {
                        None => term,
                        Some(t) => t.add(term)?,
                    });
                }
                total.ok_or_else(|| Error::Architecture("actor has no parameters".into()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::actor::HeadKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(g: &Graph, n: usize, d: usize, seed: u64) -> Var<'_> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        g.constant(Tensor::matrix(n, d, data).unwrap())
    }

    #[test]
    fn zero_final_layer_gives_ln2() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let actor = Actor::init(3, &[8, 8], vec![1.0], HeadKind::Deterministic, &mut rng);
        let mut mc = MetaCriticNet::feature(&actor, 16, &mut rng);
        let last = mc.net.as_mut().unwrap().layers_mut().last_mut().unwrap();
        last.weight = Tensor::zeros(last.weight.shape());
        last.bias = Tensor::zeros(last.bias.shape());
        let g = Graph::new();
        let h = mc
            .loss(&mc.bind(&g), &actor, &actor.bind(&g), batch(&g, 5, 3, 2), None)
            .unwrap();
        assert!((h.item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn param_reg_sums_absolute_values() {
        let feature = DenseNet::zeros(&[1, 1], Activation::Linear, Activation::Linear);
        let head = DenseNet::zeros(&[1, 1], Activation::Linear, Activation::Linear);
        let mut actor = Actor::new(feature, head, HeadKind::Deterministic, vec![1.0]).unwrap();
        actor.set_flat(&[1.0, 0.0, -2.0, 3.0]).unwrap();
        let mc = MetaCriticNet::param_reg(&actor, 1.0);
        let g = Graph::new();
        let h = mc
            .loss(&mc.bind(&g), &actor, &actor.bind(&g), batch(&g, 2, 1, 0), None)
            .unwrap();
        assert!((h.item() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn state_action_variant_needs_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let actor = Actor::init(3, &[8], vec![1.0], HeadKind::Deterministic, &mut rng);
        let mc = MetaCriticNet::feature_state_action(&actor, 8, &mut rng);
        let g = Graph::new();
        let r = mc.loss(&mc.bind(&g), &actor, &actor.bind(&g), batch(&g, 2, 3, 0), None);
        assert!(r.is_err());
    }

    #[test]
    fn empty_batch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let actor = Actor::init(3, &[8], vec![1.0], HeadKind::Deterministic, &mut rng);
        let mc = MetaCriticNet::feature(&actor, 8, &mut rng);
        let g = Graph::new();
        let s = g.constant(Tensor::zeros(&[0, 3]));
        assert!(matches!(
            mc.loss(&mc.bind(&g), &actor, &actor.bind(&g), s, None),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn softplus_inverse_round_trips() {
        for y in [1e-3, 0.5, 1.0, 20.0] {
            let x = softplus_inverse(y);
            assert!(((1.0 + x.exp()).ln() - y).abs() < 1e-12 * y.max(1.0));
        }
    }
}
