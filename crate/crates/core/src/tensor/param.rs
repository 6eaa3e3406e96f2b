use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A named persistent tensor that outlives individual graphs.
///
/// Trainable parameters accumulate gradients across every graph that reads
/// them until [`Param::zero_grad`] is called. Buffers (running statistics)
/// and frozen parameters never receive gradients.
#[derive(Debug)]
pub struct Param<S> {
    name: String,
    value: RwLock<Tensor<S>>,
    grad: Mutex<Tensor<S>>,
    trainable: AtomicBool,
    buffer: bool,
}

pub type ParamRef<S> = Arc<Param<S>>;

impl<S: Scalar> Param<S> {
    pub fn new(name: impl Into<String>, value: Tensor<S>) -> ParamRef<S> {
        Self::build(name.into(), value, false)
    }

    /// Non-trainable state saved with checkpoints (e.g. batch-norm running stats).
    pub fn buffer(name: impl Into<String>, value: Tensor<S>) -> ParamRef<S> {
        Self::build(name.into(), value, true)
    }

    fn build(name: String, value: Tensor<S>, buffer: bool) -> ParamRef<S> {
        let grad = Tensor::zeros(value.shape());
        Arc::new(Param {
            name,
            value: RwLock::new(value),
            grad: Mutex::new(grad),
            trainable: AtomicBool::new(!buffer),
            buffer,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> RwLockReadGuard<'_, Tensor<S>> {
        self.value.read().expect("param lock poisoned")
    }

    pub fn snapshot(&self) -> Tensor<S> {
        self.value().clone()
    }

    pub fn set_value(&self, value: Tensor<S>) {
        let mut v = self.value.write().expect("param lock poisoned");
        assert_eq!(v.shape(), value.shape(), "shape change on {}", self.name);
        *v = value;
    }

    pub fn update(&self, f: impl FnOnce(&mut Tensor<S>)) {
        let mut v = self.value.write().expect("param lock poisoned");
        f(&mut v);
    }

    pub fn grad(&self) -> Tensor<S> {
        self.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        self.grad.lock().expect("grad lock poisoned").fill(S::zero());
    }

    pub fn accumulate_grad(&self, g: &Tensor<S>) {
        if !self.is_trainable() {
            return;
        }
        self.grad.lock().expect("grad lock poisoned").add_assign(g);
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable.load(Ordering::Relaxed)
    }

    pub fn is_buffer(&self) -> bool {
        self.buffer
    }

    pub fn set_frozen(&self, frozen: bool) {
        if !self.buffer {
            self.trainable.store(!frozen, Ordering::Relaxed);
        }
    }

    pub fn numel(&self) -> usize {
        self.value().numel()
    }
}

/// Collect parameters, dropping repeated references to the same object.
pub fn dedup_params<S>(params: impl IntoIterator<Item = ParamRef<S>>) -> Vec<ParamRef<S>> {
    let mut out: Vec<ParamRef<S>> = Vec::new();
    for p in params {
        if !out.iter().any(|q| Arc::ptr_eq(q, &p)) {
            out.push(p);
        }
    }
    out
}
