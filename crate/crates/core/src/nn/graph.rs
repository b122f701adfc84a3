use super::{NnError, Scalar, Tensor};

/// Handle to a node in a [`Graph`]. Only valid for the graph that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Backward rule of one recorded op: given all node values and the
/// upstream gradient, return `(parent_index, gradient_contribution)`
/// pairs.
pub(crate) type BackFn<F> =
    Box<dyn Fn(&[Tensor<F>], &Tensor<F>) -> Vec<(usize, Tensor<F>)> + Send + Sync>;

/// Tape of executed primitive ops. Nodes are appended in execution
/// order, so reverse iteration is a valid reverse topological order.
pub struct Graph<F: Scalar> {
    pub(crate) values: Vec<Tensor<F>>,
    pub(crate) parents: Vec<Vec<usize>>,
    backs: Vec<Option<BackFn<F>>>,
    needs: Vec<bool>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            parents: Vec::new(),
            backs: Vec::new(),
            needs: Vec::new(),
        }
    }

    /// Insert a leaf node. `requires_grad` marks it (and everything
    /// derived from it) for gradient accumulation.
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.values.push(value);
        self.parents.push(Vec::new());
        self.backs.push(None);
        self.needs.push(requires_grad);
        Var(self.values.len() - 1)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.values[v.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Record a derived node. Internal: every public op funnels
    /// through here.
    pub(crate) fn push(&mut self, value: Tensor<F>, parents: Vec<usize>, back: BackFn<F>) -> Var {
        let needs = parents.iter().any(|&p| self.needs[p]);
        self.values.push(value);
        self.backs.push(if needs { Some(back) } else { None });
        self.parents.push(parents);
        self.needs.push(needs);
        Var(self.values.len() - 1)
    }

    /// Reverse-mode accumulation from a scalar loss. Visits nodes in
    /// exact reverse insertion order; deterministic for a fixed graph.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>, NnError> {
        let n = self.values[loss.0].numel();
        if n != 1 {
            return Err(NnError::NotScalar(n));
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.values.len()];
        grads[loss.0] = Some(Tensor::full(self.values[loss.0].shape(), F::one()));

        for i in (0..=loss.0).rev() {
            let Some(back) = &self.backs[i] else { continue };
            let Some(g) = grads[i].take() else { continue };
            for (parent, contrib) in back(&self.values, &g) {
                if !self.needs[parent] {
                    continue;
                }
                match &mut grads[parent] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            // keep gradients of leaves and of nodes callers may query
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Result of a backward pass: per-node gradients.
pub struct Gradients<F: Scalar> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a node, defaulting to zeros when the node did not
    /// participate in the loss.
    pub fn grad_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<F> {
        match self.grad(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[3], vec![1.0, -2.0, 5.0]).unwrap(), true);
        let s = g.sum_all(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_gradient() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::from_vec(&[3], vec![1.0, -2.0, 5.0]).unwrap(), true);
        let sq = g.mul(x, x).unwrap();
        let s = g.sum_all(sq);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.grad(x).unwrap().data(), &[2.0, -4.0, 10.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2]), true);
        assert!(matches!(g.backward(x), Err(NnError::NotScalar(2))));
    }

    #[test]
    fn unused_leaf_has_no_grad() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2]), true);
        let y = g.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap(), true);
        let s = g.sum_all(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.grad(x).is_none());
        assert_eq!(grads.grad_or_zeros(x, &[2]).data(), &[0.0, 0.0]);
    }
}
