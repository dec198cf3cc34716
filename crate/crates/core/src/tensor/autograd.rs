use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::Tensor;
use crate::error::{ensure, Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Backward rule: receives the upstream gradient, the op inputs and the op
/// output, and returns one optional gradient per input.
pub(crate) type BackwardFn =
    dyn Fn(&Tensor, &[Var], &Tensor) -> Result<Vec<Option<Tensor>>> + Send + Sync;

struct GradFn {
    name: &'static str,
    inputs: Vec<Var>,
    backward: Box<BackwardFn>,
}

struct Node {
    id: u64,
    value: Tensor,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
    grad: Mutex<Option<Tensor>>,
}

/// A tensor participating in gradient recording.
///
/// Cloning is cheap (reference counted). Ids grow monotonically, so every
/// op output has a larger id than all of its inputs.
#[derive(Clone)]
pub struct Var(Arc<Node>);

impl Var {
    fn with(value: Tensor, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        Var(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            grad_fn,
            grad: Mutex::new(None),
        }))
    }

    /// Trainable leaf; receives a gradient from [`backward`].
    pub fn leaf(value: Tensor) -> Self {
        Self::with(value, true, None)
    }

    pub fn constant(value: Tensor) -> Self {
        Self::with(value, false, None)
    }

    /// Wraps an op result. Nothing is recorded (and the inputs are released)
    /// when no input requires a gradient.
    pub(crate) fn from_op(
        name: &'static str,
        value: Tensor,
        inputs: Vec<Var>,
        backward: Box<BackwardFn>,
    ) -> Result<Self> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(Error::Numeric {
                stage: name.to_string(),
                detail: "non-finite value produced".into(),
            });
        }
        if inputs.iter().any(Var::requires_grad) {
            Ok(Self::with(value, true, Some(GradFn { name, inputs, backward })))
        } else {
            Ok(Self::constant(value))
        }
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Accumulated gradient of a leaf after [`backward`].
    pub fn grad(&self) -> Option<Tensor> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.value().clone())
    }

    fn op_name(&self) -> &'static str {
        self.0.grad_fn.as_ref().map_or("leaf", |f| f.name)
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id())
            .field("op", &self.op_name())
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

/// Operations reachable from a root, in creation order (inputs first).
pub struct GradTape {
    nodes: Vec<Var>,
}

impl GradTape {
    pub fn record(root: &Var) -> Self {
        let mut seen = HashSet::new();
        let mut nodes = Vec::new();
        let mut stack = vec![root.clone()];
        while let Some(v) = stack.pop() {
            if !v.requires_grad() || !seen.insert(v.id()) {
                continue;
            }
            if let Some(f) = &v.0.grad_fn {
                stack.extend(f.inputs.iter().cloned());
            }
            nodes.push(v);
        }
        nodes.sort_by_key(Var::id);
        Self { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(Var::op_name).collect()
    }
}

/// Propagates d(loss)/d(leaf) into every trainable leaf reachable from `loss`.
/// Gradients accumulate into existing leaf buffers.
pub fn backward(loss: &Var) -> Result<()> {
    ensure!(
        loss.value().numel() == 1,
        "backward() needs a scalar loss, got shape {:?}",
        loss.shape()
    );
    if !loss.requires_grad() {
        return Err(Error::InvalidState(
            "loss was not produced from any trainable leaf".into(),
        ));
    }
    let tape = GradTape::record(loss);
    let mut pending: HashMap<u64, Tensor> = HashMap::new();
    pending.insert(loss.id(), Tensor::full(loss.shape(), 1.0));

    for node in tape.nodes.into_iter().rev() {
        let Some(grad_out) = pending.remove(&node.id()) else {
            continue;
        };
        match &node.0.grad_fn {
            None => {
                let mut slot = node.0.grad.lock().expect("grad lock poisoned");
                match slot.as_mut() {
                    Some(acc) => acc.add_assign(&grad_out),
                    None => *slot = Some(grad_out),
                }
            }
            Some(f) => {
                let grads = (f.backward)(&grad_out, &f.inputs, node.value())?;
                debug_assert_eq!(grads.len(), f.inputs.len(), "{}", f.name);
                for (input, grad) in f.inputs.iter().zip(grads) {
                    let Some(grad) = grad else { continue };
                    if !input.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(grad.shape(), input.shape(), "{}", f.name);
                    match pending.get_mut(&input.id()) {
                        Some(acc) => acc.add_assign(&grad),
                        None => {
                            pending.insert(input.id(), grad);
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
