//! Recorded operation graph with reverse-mode differentiation.
//!
//! A [`Graph`] borrows a [`ParamStore`] for the duration of one forward pass.
//! Every operation appends a node holding its value and enough context to
//! run its adjoint. [`Graph::backward`] walks the nodes in reverse and
//! returns [`Gradients`]; parameter gradients are folded back into the store
//! with [`ParamStore::accumulate`] once the graph is dropped.

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::kernels::conv::ConvGeom;
use crate::param::{ParamId, ParamStore};
use crate::{Element, Shape, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    /// Compute values.
    Full,
    /// Propagate shapes and operation costs only; no data is allocated.
    ShapeOnly,
}

/// Broadcasting pattern of a binary elementwise op.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// the right operand has one channel
    RhsChannels,
    /// the left operand has one channel
    LhsChannels,
}

pub(crate) enum Op<T> {
    Input,
    Param,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Resize { x: Var },
    GridSample { x: Var, flow: Var },
    Add { a: Var, b: Var, bc: Broadcast },
    Mul { a: Var, b: Var, bc: Broadcast },
    AddScalar { x: Var },
    MulScalar { x: Var, s: T },
    Sigmoid { x: Var },
    Relu { x: Var },
    Concat { xs: Vec<Var> },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    GlobalAvgPool { x: Var },
    ScaleChannels { x: Var, s: Var },
    SumAll { x: Var },
    MeanAll { x: Var },
    Bce { p: Var, target: Rc<Tensor<T>>, eps: T },
    Iou { p: Var, target: Rc<Tensor<T>>, eps: T },
}

pub(crate) struct Node<T> {
    pub value: Rc<Tensor<T>>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Cost record of one executed operation.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCost {
    pub op: &'static str,
    pub output: Shape,
    pub flops: u64,
}

pub struct Graph<'p, T: Element> {
    params: &'p ParamStore<T>,
    mode: ExecMode,
    pub(crate) nodes: RefCell<Vec<Node<T>>>,
    param_nodes: RefCell<HashMap<ParamId, Var>>,
    flops: Cell<u64>,
    costs: RefCell<Vec<OpCost>>,
}

impl<'p, T: Element> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self::with_mode(params, ExecMode::Full)
    }

    pub fn with_mode(params: &'p ParamStore<T>, mode: ExecMode) -> Self {
        Self {
            params,
            mode,
            nodes: RefCell::new(Vec::new()),
            param_nodes: RefCell::new(HashMap::new()),
            flops: Cell::new(0),
            costs: RefCell::new(Vec::new()),
        }
    }

    pub fn mode(&self) -> ExecMode {
        self.mode
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Constant input: gradients are not propagated into it.
    pub fn input(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes.borrow().get(&id) {
            return *v;
        }
        let p = self.params.get(id);
        let value = match self.mode {
            ExecMode::Full => p.value.clone(),
            ExecMode::ShapeOnly => Tensor::shape_only(p.value.shape()),
        };
        let v = self.push(value, Op::Param, true);
        self.param_nodes.borrow_mut().insert(id, v);
        v
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes.borrow()[v.0].value.shape()
    }

    /// Shared handle to a node's value.
    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    /// Scalar value of a `1x1x1x1` node.
    pub fn scalar(&self, v: Var) -> T {
        let nodes = self.nodes.borrow();
        let t = &nodes[v.0].value;
        t.data().first().copied().unwrap_or_else(T::nan)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Total floating-point operations recorded so far.
    pub fn flops(&self) -> u64 {
        self.flops.get()
    }

    pub fn costs(&self) -> Ref<'_, Vec<OpCost>> {
        self.costs.borrow()
    }

    pub(crate) fn record(&self, op: &'static str, output: Shape, flops: u64) {
        self.flops.set(self.flops.get() + flops);
        self.costs.borrow_mut().push(OpCost { op, output, flops });
    }

    pub(crate) fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var(nodes.len() - 1)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.0].value.shape();
        if shape.numel() != 1 {
            return Err(TensorError::NotScalar(shape));
        }
        if self.mode == ExecMode::ShapeOnly {
            return Err(crate::error::invalid("backward", "graph was evaluated in shape-only mode"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(shape));
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Input | Op::Param) {
                grads[i] = Some(g);
                continue;
            }
            crate::backward::propagate(&nodes, i, &g, &mut grads);
        }
        let mut params: Vec<_> = self.param_nodes.borrow().iter().map(|(id, v)| (*id, *v)).collect();
        params.sort_unstable();
        Ok(Gradients { grads, params })
    }
}

/// Result of [`Graph::backward`]: gradients of the graph's leaves.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a leaf; `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zeros when unreachable.
    pub fn get_or_zeros(&self, v: Var, shape: Shape) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    /// `(parameter, gradient)` pairs for every parameter the loss reached.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> + '_ {
        self.params.iter().filter_map(|(id, v)| self.get(*v).map(|g| (*id, g)))
    }
}
