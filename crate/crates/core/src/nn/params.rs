use super::{Gradients, Graph, Scalar, Tensor, Var};

/// Index of a named parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Flat registry of trainable parameters. Layers hold `ParamId`s;
/// the optimizer updates the store in place between steps.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<F>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<F>)> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone)]
pub struct BnState<F: Scalar> {
    pub mean: Tensor<F>,
    pub var: Tensor<F>,
    pub momentum: F,
    pub eps: F,
}

impl<F: Scalar> BnState<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], F::one()),
            momentum: F::f(0.1),
            eps: F::f(1e-5),
        }
    }

    pub fn cast<G: Scalar>(&self) -> BnState<G> {
        BnState {
            mean: self.mean.cast(),
            var: self.var.cast(),
            momentum: G::f(self.momentum.to64()),
            eps: G::f(self.eps.to64()),
        }
    }
}

/// Index of a batch-norm state in a [`BnStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BnId(pub(crate) usize);

#[derive(Debug, Clone, Default)]
pub struct BnStore<F: Scalar> {
    states: Vec<BnState<F>>,
}

impl<F: Scalar> BnStore<F> {
    pub fn new() -> Self {
        Self { states: Vec::new() }
    }

    pub fn add(&mut self, channels: usize) -> BnId {
        self.states.push(BnState::new(channels));
        BnId(self.states.len() - 1)
    }

    pub fn get_mut(&mut self, id: BnId) -> &mut BnState<F> {
        &mut self.states[id.0]
    }

    pub fn get(&self, id: BnId) -> &BnState<F> {
        &self.states[id.0]
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[BnState<F>] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [BnState<F>] {
        &mut self.states
    }

    pub fn cast<G: Scalar>(&self) -> BnStore<G> {
        BnStore {
            states: self.states.iter().map(|s| s.cast()).collect(),
        }
    }
}

/// One forward/backward pass: a fresh graph plus the leaf vars created
/// for each parameter touched so far.
pub struct Session<F: Scalar> {
    pub graph: Graph<F>,
    param_vars: Vec<Option<Var>>,
}

impl<F: Scalar> Session<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        Self {
            graph: Graph::new(),
            param_vars: vec![None; store.len()],
        }
    }

    /// Leaf var for a parameter, inserted lazily (with grad tracking).
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.graph.leaf(store.get(id).clone(), true);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.param_vars.get(id.0).copied().flatten()
    }

    /// Gradients aligned with the parameter store (zeros for
    /// parameters that did not participate).
    pub fn collect_grads(&self, store: &ParamStore<F>, grads: &Gradients<F>) -> Vec<Tensor<F>> {
        store
            .iter()
            .map(|(id, _, t)| match self.param_vars[id.0] {
                Some(v) => grads.grad_or_zeros(v, t.shape()),
                None => Tensor::zeros(t.shape()),
            })
            .collect()
    }
}
