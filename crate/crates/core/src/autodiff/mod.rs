//! Minimal reverse-mode automatic differentiation on `f64` ndarrays.
//!
//! A [`Tape`] records every intermediate value of a forward pass together
//! with a backward closure; [`Tape::backward`] replays the closures in
//! reverse insertion order (which is already a topological order, since every
//! operand is created before its consumers). All arithmetic is `f64`: the
//! gradient test suites check analytic derivatives against central finite
//! differences at 1e-5 relative accuracy, which single precision cannot meet.
//!
//! Values whose subgraph contains no differentiable leaf skip backward-
//! closure construction entirely, so inference passes pay no autodiff tax.

mod conv;
mod fourier;
mod ops;
mod warp;

use ndarray::ArrayD;
use std::cell::RefCell;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type GradSink<'s> = dyn FnMut(Var, ArrayD<f64>) + 's;
type BackFn = Box<dyn Fn(&[ArrayD<f64>], &ArrayD<f64>, &mut GradSink)>;

#[derive(Default)]
pub struct Tape {
    values: RefCell<Vec<ArrayD<f64>>>,
    needs_grad: RefCell<Vec<bool>>,
    backs: RefCell<Vec<Option<BackFn>>>,
}

/// Gradients of a scalar with respect to tape leaves, produced by
/// [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<ArrayD<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push(&self, value: ArrayD<f64>, needs: bool, back: Option<BackFn>) -> Var {
        debug_assert!(value.iter().all(|v| v.is_finite()), "non-finite tape value");
        let mut values = self.values.borrow_mut();
        let id = values.len();
        values.push(value);
        self.needs_grad.borrow_mut().push(needs);
        self.backs.borrow_mut().push(if needs { back } else { None });
        Var(id)
    }

    /// Leaf that participates in differentiation (parameters, the learnable
    /// mask logits).
    pub fn leaf(&self, value: ArrayD<f64>) -> Var {
        self.push(value, true, None)
    }

    /// Leaf excluded from differentiation (inputs, fixed masks, targets).
    pub fn constant(&self, value: ArrayD<f64>) -> Var {
        self.push(value, false, None)
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.needs_grad.borrow()[v.0]
    }

    pub fn value(&self, v: Var) -> ArrayD<f64> {
        self.values.borrow()[v.0].clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.values.borrow()[v.0].shape().to_vec()
    }

    /// Applies `f` to the stored value without cloning it.
    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&ArrayD<f64>) -> R) -> R {
        f(&self.values.borrow()[v.0])
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let values = self.values.borrow();
        let a = &values[v.0];
        assert_eq!(a.len(), 1, "scalar() on non-scalar var");
        *a.iter().next().unwrap()
    }

    pub fn len(&self) -> usize {
        self.values.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse sweep from a scalar root. Gradients of interior nodes are
    /// dropped as soon as they have been consumed; leaf gradients survive in
    /// the returned [`Gradients`].
    pub fn backward(&self, root: Var) -> Gradients {
        let values = self.values.borrow();
        let backs = self.backs.borrow();
        let needs = self.needs_grad.borrow();
        assert_eq!(values[root.0].len(), 1, "backward root must be a scalar");
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; values.len()];
        grads[root.0] = Some(ArrayD::from_elem(values[root.0].raw_dim(), 1.0));
        for id in (0..=root.0).rev() {
            let Some(back) = backs[id].as_ref() else {
                continue; // leaf or constant: keep any accumulated gradient
            };
            let Some(g) = grads[id].take() else { continue };
            back(&values, &g, &mut |v: Var, contrib: ArrayD<f64>| {
                if !needs[v.0] {
                    return;
                }
                debug_assert_eq!(values[v.0].shape(), contrib.shape(), "gradient shape mismatch");
                match &mut grads[v.0] {
                    Some(acc) => *acc += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            });
        }
        Gradients { grads }
    }
}
