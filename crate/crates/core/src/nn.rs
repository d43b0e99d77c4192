//! Parameter storage, layer building blocks, and the Adam optimizer.
//!
//! Parameters live outside any tape in a [`ParamStore`]; each training step
//! binds them onto a fresh [`Tape`] as leaves, runs forward/backward, and
//! feeds the collected gradients to [`Adam`].

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Gradients, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named, ordered collection of trainable arrays.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, ArrayD<f64>)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|(n, _)| n != &name),
            "duplicate parameter name {name}"
        );
        self.entries.push((name, value));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<f64> {
        &self.entries[id.0].1
    }

    pub fn set_value(&mut self, id: ParamId, value: ArrayD<f64>) {
        assert_eq!(self.entries[id.0].1.shape(), value.shape());
        self.entries[id.0].1 = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total scalar parameter count.
    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }

    /// Replaces every value with the same-named entry of `other`.
    pub fn load_from(&mut self, other: &ParamStore) -> crate::error::Result<()> {
        for (name, value) in &mut self.entries {
            let found = other
                .entries
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| crate::error::Error::invalid(format!("missing parameter {name}")))?;
            if found.1.shape() != value.shape() {
                return Err(crate::error::Error::invalid(format!(
                    "parameter {name} shape mismatch: {:?} vs {:?}",
                    found.1.shape(),
                    value.shape()
                )));
            }
            *value = found.1.clone();
        }
        Ok(())
    }

    /// Binds all parameters onto a tape as differentiable leaves.
    pub fn bind(&self, tape: &Tape) -> Binding {
        Binding {
            vars: self.entries.iter().map(|(_, v)| tape.leaf(v.clone())).collect(),
        }
    }

    /// Binds all parameters as constants (inference / frozen passes).
    pub fn bind_const(&self, tape: &Tape) -> Binding {
        Binding {
            vars: self.entries.iter().map(|(_, v)| tape.constant(v.clone())).collect(),
        }
    }
}

/// Tape variables for every parameter of a store, in store order.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Pulls per-parameter gradients out of a backward result, aligned with
    /// the store's parameter order.
    pub fn collect(&self, grads: &mut Gradients) -> Vec<Option<ArrayD<f64>>> {
        self.vars.iter().map(|&v| grads.take(v)).collect()
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Kaiming normal, fan-in mode, ReLU gain (`std = sqrt(2 / fan_in)`).
    KaimingNormal,
    Zeros,
    /// Normal with the given standard deviation.
    Normal(f64),
}

fn init_array(rng: &mut impl Rng, shape: &[usize], fan_in: usize, init: Init) -> ArrayD<f64> {
    match init {
        Init::Zeros => ArrayD::zeros(IxDyn(shape)),
        Init::Normal(std) => {
            let dist = Normal::new(0.0, std).unwrap();
            ArrayD::from_shape_fn(IxDyn(shape), |_| dist.sample(rng))
        }
        Init::KaimingNormal => {
            let std = (2.0 / fan_in as f64).sqrt();
            let dist = Normal::new(0.0, std).unwrap();
            ArrayD::from_shape_fn(IxDyn(shape), |_| dist.sample(rng))
        }
    }
}

/// 3×3/1×1 convolution layer descriptor (weights live in the store).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        ksize: usize,
        stride: usize,
        bias: bool,
        init: Init,
    ) -> Self {
        let fan_in = cin * ksize * ksize;
        let w = ps.add(format!("{name}.w"), init_array(rng, &[cout, cin, ksize, ksize], fan_in, init));
        let b = bias.then(|| ps.add(format!("{name}.b"), ArrayD::zeros(IxDyn(&[cout]))));
        Conv2d { w, b, stride, pad: ksize / 2 }
    }

    pub fn forward(&self, t: &Tape, bind: &Binding, x: Var) -> Var {
        t.conv2d(x, bind.var(self.w), self.b.map(|b| bind.var(b)), self.stride, self.pad)
    }
}

/// Fully connected layer.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, rng: &mut impl Rng, name: &str, din: usize, dout: usize) -> Self {
        Linear {
            w: ps.add(format!("{name}.w"), init_array(rng, &[dout, din], din, Init::KaimingNormal)),
            b: ps.add(format!("{name}.b"), ArrayD::zeros(IxDyn(&[dout]))),
        }
    }

    pub fn forward(&self, t: &Tape, bind: &Binding, x: Var) -> Var {
        t.linear(x, bind.var(self.w), Some(bind.var(self.b)))
    }
}

/// Two 3×3 convolutions with a ReLU after the first and a skip connection.
#[derive(Debug, Clone)]
pub struct ResBlock {
    c1: Conv2d,
    c2: Conv2d,
}

impl ResBlock {
    pub fn new(ps: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize) -> Self {
        ResBlock {
            c1: Conv2d::new(ps, rng, &format!("{name}.c1"), channels, channels, 3, 1, true, Init::KaimingNormal),
            c2: Conv2d::new(ps, rng, &format!("{name}.c2"), channels, channels, 3, 1, true, Init::KaimingNormal),
        }
    }

    pub fn forward(&self, t: &Tape, bind: &Binding, x: Var) -> Var {
        let h = self.c1.forward(t, bind, x);
        let h = t.relu(h);
        let h = self.c2.forward(t, bind, h);
        t.add(x, h)
    }
}

/// A stack of residual blocks (no normalization layers anywhere).
#[derive(Debug, Clone)]
pub struct ResChain {
    blocks: Vec<ResBlock>,
}

impl ResChain {
    pub fn new(ps: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize, depth: usize) -> Self {
        ResChain {
            blocks: (0..depth)
                .map(|i| ResBlock::new(ps, rng, &format!("{name}.block{i}"), channels))
                .collect(),
        }
    }

    pub fn forward(&self, t: &Tape, bind: &Binding, mut x: Var) -> Var {
        for b in &self.blocks {
            x = b.forward(t, bind, x);
        }
        x
    }
}

/// Learned proximal operator: a chain of lightweight residual blocks.
pub type ProxNet = ResChain;

/// Adam with optional global-norm gradient clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: store.iter().map(|(_, v)| ArrayD::zeros(v.raw_dim())).collect(),
            v: store.iter().map(|(_, v)| ArrayD::zeros(v.raw_dim())).collect(),
        }
    }

    /// Applies one update. `grads` is aligned with the store order; `None`
    /// entries (parameters unused by this graph) are skipped.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &mut [Option<ArrayD<f64>>],
        clip_global_norm: Option<f64>,
    ) {
        assert_eq!(grads.len(), store.len());
        if let Some(max_norm) = clip_global_norm {
            let norm: f64 = grads
                .iter()
                .flatten()
                .map(|g| g.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if norm > max_norm {
                let scale = max_norm / norm;
                for g in grads.iter_mut().flatten() {
                    g.mapv_inplace(|v| v * scale);
                }
            }
        }
        self.step_count += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for (idx, id) in store.ids().enumerate().map(|(i, id)| (i, id)).collect::<Vec<_>>() {
            let Some(g) = &grads[idx] else { continue };
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            });
            let mut value = store.value(id).clone();
            ndarray::Zip::from(&mut value).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            });
            store.set_value(id, value);
        }
    }
}

/// Exponential-moving-average shadow of a parameter store.
#[derive(Debug, Clone)]
pub struct Ema {
    pub decay: f64,
    shadow: Vec<ArrayD<f64>>,
}

impl Ema {
    pub fn new(store: &ParamStore, decay: f64) -> Self {
        Ema {
            decay,
            shadow: store.iter().map(|(_, v)| v.clone()).collect(),
        }
    }

    /// `shadow = decay·shadow + (1-decay)·value`; decay 0 tracks the raw
    /// weights exactly.
    pub fn update(&mut self, store: &ParamStore) {
        for (s, (_, v)) in self.shadow.iter_mut().zip(store.iter().map(|(n, v)| (n, v))) {
            ndarray::Zip::from(&mut *s).and(v).for_each(|s, &v| {
                *s = self.decay * *s + (1.0 - self.decay) * v;
            });
        }
    }

    /// A copy of `store` carrying the shadow values.
    pub fn snapshot(&self, store: &ParamStore) -> ParamStore {
        let mut out = store.clone();
        for (idx, id) in out.ids().enumerate().collect::<Vec<_>>() {
            out.set_value(id, self.shadow[idx].clone());
        }
        out
    }
}
