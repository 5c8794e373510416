use mc_autodiff::{Graph, Tensor, Var};
use rand::Rng;

use super::dense::{polyak, Activation, DenseNet};
use crate::error::{Error, Result};

/// Q-network over `concat(s, a)`, optionally with a twin.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub q1: DenseNet,
    pub q2: Option<DenseNet>,
}

impl Critic {
    pub fn new(q1: DenseNet, q2: Option<DenseNet>) -> Result<Self> {
        if q1.output_dim() != 1 {
            return Err(Error::Architecture(format!(
                "critic must output one value per row, got {}",
                q1.output_dim()
            )));
        }
        if let Some(q2) = &q2 {
            if !q1.same_architecture(q2) {
                return Err(Error::Architecture("twin critics differ in shape".into()));
            }
        }
        Ok(Self { q1, q2 })
    }

    pub fn init(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        twin: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let q1 = DenseNet::init(&sizes, Activation::Relu, Activation::Linear, rng);
        let q2 = twin.then(|| DenseNet::init(&sizes, Activation::Relu, Activation::Linear, rng));
        Self { q1, q2 }
    }

    /// A critic whose output is `c` everywhere: all weights zero, last bias `c`.
    pub fn constant(input_dim: usize, hidden: &[usize], twin: bool, c: f64) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut q = DenseNet::zeros(&sizes, Activation::Relu, Activation::Linear);
        let last = q.layers_mut().last_mut().expect("at least one layer");
        last.bias = Tensor::vector(vec![c]);
        Self {
            q1: q.clone(),
            q2: twin.then_some(q),
        }
    }

    pub fn is_twin(&self) -> bool {
        self.q2.is_some()
    }

    pub fn input_dim(&self) -> usize {
        self.q1.input_dim()
    }

    pub fn num_tensors(&self) -> usize {
        self.q1.num_tensors() + self.q2.as_ref().map_or(0, |q| q.num_tensors())
    }

    pub fn num_params(&self) -> usize {
        self.q1.num_params() + self.q2.as_ref().map_or(0, |q| q.num_params())
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.q1.params();
        if let Some(q2) = &self.q2 {
            p.extend(q2.params());
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.q1.params_mut();
        if let Some(q2) = &mut self.q2 {
            p.extend(q2.params_mut());
        }
        p
    }

    pub fn bind<'g>(&self, g: &'g Graph) -> Vec<Var<'g>> {
        self.params().into_iter().map(|t| g.variable(t.clone())).collect()
    }

    pub fn bind_constants<'g>(&self, g: &'g Graph) -> Vec<Var<'g>> {
        self.params().into_iter().map(|t| g.constant(t.clone())).collect()
    }

    /// Returns `(Q1(s,a), Q2(s,a))`, each `(n, 1)`.
    pub fn forward<'g>(
        &self,
        params: &[Var<'g>],
        states: Var<'g>,
        actions: Var<'g>,
    ) -> Result<(Var<'g>, Option<Var<'g>>)> {
        if params.len() != self.num_tensors() {
            return Err(Error::Dim {
                context: "critic parameter count",
                expected: self.num_tensors(),
                actual: params.len(),
            });
        }
        let x = states.graph().concat_cols(&[states, actions])?;
        let (p1, p2) = params.split_at(self.q1.num_tensors());
        let q1 = self.q1.forward(p1, x)?;
        let q2 = match &self.q2 {
            Some(net) => Some(net.forward(p2, x)?),
            None => None,
        };
        Ok((q1, q2))
    }

    /// Elementwise `min(Q1, Q2)`, or `Q1` for a single critic.
    pub fn min_q<'g>(&self, params: &[Var<'g>], states: Var<'g>, actions: Var<'g>) -> Result<Var<'g>> {
        match self.forward(params, states, actions)? {
            (q1, Some(q2)) => Ok(q1.minimum(q2)?),
            (q1, None) => Ok(q1),
        }
    }

    pub fn polyak_from(&mut self, source: &Critic, tau: f64) -> Result<()> {
        polyak(&mut self.q1, &source.q1, tau)?;
        match (&mut self.q2, &source.q2) {
            (Some(t), Some(s)) => polyak(t, s, tau),
            (None, None) => Ok(()),
            _ => Err(Error::Architecture("twin mismatch in polyak".into())),
        }
    }
}
