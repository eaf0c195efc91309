use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use ndarray::{ArrayD, IxDyn};

use crate::Float;

/// Dense row-major array used for every node value and gradient.
pub type Tensor<T> = ArrayD<T>;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Tape of recorded operations.
///
/// Values are immutable once recorded. A graph built with
/// [`Graph::inference`] never stores backward closures, so it only costs the
/// forward values.
pub struct Graph<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
        }
    }

    pub fn inference() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        let value = into_standard(value);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad: requires_grad && self.grad_enabled,
            parents: Vec::new(),
            backward: None,
        });
        Var(nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Trainable leaf; gradients are reported by [`Graph::backward`].
    pub fn param(&self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Records an operation result. `backward` maps the output gradient to one
    /// optional gradient per parent, in order.
    pub fn record<F>(&self, value: Tensor<T>, parents: &[Var], backward: F) -> Var
    where
        F: Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        let value = into_standard(value);
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad =
            self.grad_enabled && parents.iter().any(|p| nodes[p.0].requires_grad);
        let (parents, backward): (Vec<usize>, Option<BackwardFn<T>>) = if requires_grad {
            (parents.iter().map(|p| p.0).collect(), Some(Box::new(backward)))
        } else {
            (Vec::new(), None)
        };
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            parents,
            backward,
        });
        Var(nodes.len() - 1)
    }

    /// Reverse pass seeded with ones at `output`.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        let seed = Tensor::from_elem(self.shape(output), T::one());
        self.backward_from(output, seed)
    }

    /// Reverse pass seeded with an explicit output gradient.
    pub fn backward_from(&self, output: Var, seed: Tensor<T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(
            seed.shape(),
            nodes[output.0].value.shape(),
            "seed gradient shape must match the output"
        );
        let mut grads: Vec<Option<Tensor<T>>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(seed);
        let mut leaves = HashMap::new();
        for id in (0..=output.0).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(backward) = node.backward.as_ref() else {
                leaves.insert(Var(id), grad);
                continue;
            };
            let parent_grads = backward(&grad);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[pid].requires_grad {
                    continue;
                }
                assert_eq!(
                    pg.shape(),
                    nodes[pid].value.shape(),
                    "gradient shape mismatch for node {pid}"
                );
                match grads[pid].as_mut() {
                    Some(acc) => *acc += &pg,
                    None => grads[pid] = Some(pg),
                }
            }
        }
        Gradients { grads: leaves }
    }
}

/// Gradients of the trainable leaves reached by a reverse pass.
#[derive(Debug, Default)]
pub struct Gradients<T> {
    grads: HashMap<Var, Tensor<T>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

pub(crate) fn into_standard<T: Float>(a: Tensor<T>) -> Tensor<T> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

pub(crate) fn zeros<T: Float>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(IxDyn(shape))
}
