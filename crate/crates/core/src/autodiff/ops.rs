//! Element-wise, reduction, broadcast and shape ops for the tape.

use ndarray::{ArrayD, Axis, IxDyn, Zip};

use super::{Tape, Var};
use crate::filter::{blur_with_kernel, blur_with_kernel_adjoint};

impl Tape {
    fn value_ref(&self, v: Var) -> ArrayD<f64> {
        self.values.borrow()[v.0].clone()
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value_ref(a), self.value_ref(b));
        assert_eq!(va.shape(), vb.shape(), "add: shape mismatch");
        let out = &va + &vb;
        let needs = self.needs_grad(a) || self.needs_grad(b);
        self.push(
            out,
            needs,
            Some(Box::new(move |_vals, g, sink| {
                sink(a, g.clone());
                sink(b, g.clone());
            })),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value_ref(a), self.value_ref(b));
        assert_eq!(va.shape(), vb.shape(), "sub: shape mismatch");
        let out = &va - &vb;
        let needs = self.needs_grad(a) || self.needs_grad(b);
        self.push(
            out,
            needs,
            Some(Box::new(move |_vals, g, sink| {
                sink(a, g.clone());
                sink(b, -g);
            })),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value_ref(a), self.value_ref(b));
        assert_eq!(va.shape(), vb.shape(), "mul: shape mismatch");
        let out = &va * &vb;
        let needs = self.needs_grad(a) || self.needs_grad(b);
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, g, sink| {
                sink(a, g * &vals[b.0]);
                sink(b, g * &vals[a.0]);
            })),
        )
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let out = self.value_ref(a).mapv(|v| v * c);
        let needs = self.needs_grad(a);
        self.push(
            out,
            needs,
            Some(Box::new(move |_vals, g, sink| sink(a, g.mapv(|v| v * c)))),
        )
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let out = self.value_ref(a).mapv(|v| v + c);
        let needs = self.needs_grad(a);
        self.push(out, needs, Some(Box::new(move |_vals, g, sink| sink(a, g.clone()))))
    }

    /// Element-wise reciprocal.
    pub fn recip(&self, a: Var) -> Var {
        let out = self.value_ref(a).mapv(|v| 1.0 / v);
        let needs = self.needs_grad(a);
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, g, sink| {
                let x = &vals[a.0];
                sink(a, Zip::from(g).and(x).map_collect(|&gv, &xv| -gv / (xv * xv)));
            })),
        )
    }

    pub fn relu(&self, a: Var) -> Var {
        let out = self.value_ref(a).mapv(|v| v.max(0.0));
        let needs = self.needs_grad(a);
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, g, sink| {
                let x = &vals[a.0];
                sink(a, Zip::from(g).and(x).map_collect(|&gv, &xv| if xv > 0.0 { gv } else { 0.0 }));
            })),
        )
    }

    /// |x| with the subgradient 0 at the kink.
    pub fn abs(&self, a: Var) -> Var {
        let out = self.value_ref(a).mapv(f64::abs);
        let needs = self.needs_grad(a);
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, g, sink| {
                let x = &vals[a.0];
                sink(
                    a,
                    Zip::from(g).and(x).map_collect(|&gv, &xv| gv * if xv > 0.0 { 1.0 } else if xv < 0.0 { -1.0 } else { 0.0 }),
                );
            })),
        )
    }

    pub fn exp(&self, a: Var) -> Var {
        let out = self.value_ref(a).mapv(f64::exp);
        let needs = self.needs_grad(a);
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, g, sink| {
                let x = &vals[a.0];
                sink(a, Zip::from(g).and(x).map_collect(|&gv, &xv| gv * xv.exp()));
            })),
        )
    }

    /// Sigmoid with slope: `σ_s(x) = 1 / (1 + exp(-s·x))`.
    pub fn sigmoid_slope(&self, a: Var, slope: f64) -> Var {
        let sig = move |v: f64| 1.0 / (1.0 + (-slope * v).exp());
        let out = self.value_ref(a).mapv(sig);
        let needs = self.needs_grad(a);
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, g, sink| {
                let x = &vals[a.0];
                sink(
                    a,
                    Zip::from(g).and(x).map_collect(|&gv, &xv| {
                        let y = sig(xv);
                        gv * slope * y * (1.0 - y)
                    }),
                );
            })),
        )
    }

    pub fn sum(&self, a: Var) -> Var {
        let total: f64 = self.values.borrow()[a.0].iter().sum();
        let shape = self.shape(a);
        let needs = self.needs_grad(a);
        self.push(
            ArrayD::from_elem(IxDyn(&[1]), total),
            needs,
            Some(Box::new(move |_vals, g, sink| {
                let gv = g[[0]];
                sink(a, ArrayD::from_elem(IxDyn(&shape), gv));
            })),
        )
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.values.borrow()[a.0].len();
        self.scale(self.sum(a), 1.0 / n as f64)
    }

    /// `mean(|a - b|)`, the workhorse of the ℓ1 losses.
    pub fn mean_abs_diff(&self, a: Var, b: Var) -> Var {
        self.mean(self.abs(self.sub(a, b)))
    }

    /// Multiplies a tensor by a `[1]`-shaped scalar variable.
    pub fn mul_scalar_var(&self, s: Var, x: Var) -> Var {
        let sv = self.scalar(s);
        let out = self.value_ref(x).mapv(|v| v * sv);
        let needs = self.needs_grad(s) || self.needs_grad(x);
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, g, sink| {
                let sv = vals[s.0][[0]];
                sink(x, g.mapv(|v| v * sv));
                let dot: f64 = g.iter().zip(vals[x.0].iter()).map(|(a, b)| a * b).sum();
                sink(s, ArrayD::from_elem(IxDyn(&[1]), dot));
            })),
        )
    }

    /// Divides a tensor by a `[1]`-shaped scalar variable.
    pub fn div_scalar_var(&self, x: Var, s: Var) -> Var {
        self.mul_scalar_var(self.recip(s), x)
    }

    /// Adds a `[C]` bias per channel to a `[C,H,W]` tensor.
    pub fn add_channel_bias(&self, x: Var, b: Var) -> Var {
        let xv = self.value_ref(x);
        let bv = self.value_ref(b);
        assert_eq!(xv.ndim(), 3, "add_channel_bias expects [C,H,W]");
        assert_eq!(bv.shape(), [xv.shape()[0]], "bias length must match channels");
        let mut out = xv.clone();
        for (c, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
            plane += bv[[c]];
        }
        let needs = self.needs_grad(x) || self.needs_grad(b);
        self.push(
            out,
            needs,
            Some(Box::new(move |_vals, g, sink| {
                sink(x, g.clone());
                let gb: Vec<f64> = g.axis_iter(Axis(0)).map(|plane| plane.sum()).collect();
                sink(b, ArrayD::from_shape_vec(IxDyn(&[gb.len()]), gb).unwrap());
            })),
        )
    }

    /// Multiplies a `[C,H,W]` (or `[H,W]`) tensor by an `[H,W]` grid,
    /// broadcasting over channels. Both sides may carry gradients.
    pub fn mul_spatial(&self, x: Var, m: Var) -> Var {
        let xv = self.value_ref(x);
        let mv = self.value_ref(m);
        assert_eq!(mv.ndim(), 2, "mul_spatial: grid must be 2-D");
        let (h, w) = (mv.shape()[0], mv.shape()[1]);
        assert_eq!(&xv.shape()[xv.ndim() - 2..], [h, w], "mul_spatial: trailing dims mismatch");
        let mut out = xv.clone();
        if out.ndim() == 2 {
            out = out * &mv;
        } else {
            for mut plane in out.axis_iter_mut(Axis(0)) {
                Zip::from(&mut plane).and(&mv).for_each(|o, &g| *o *= g);
            }
        }
        let needs = self.needs_grad(x) || self.needs_grad(m);
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, g, sink| {
                let mv = &vals[m.0];
                let xv = &vals[x.0];
                let mut gx = g.clone();
                if gx.ndim() == 2 {
                    gx = gx * mv;
                    sink(m, g * xv);
                } else {
                    let mut gm = ArrayD::<f64>::zeros(mv.raw_dim());
                    for (mut gplane, (gout, xin)) in gx
                        .axis_iter_mut(Axis(0))
                        .zip(g.axis_iter(Axis(0)).zip(xv.axis_iter(Axis(0))))
                    {
                        Zip::from(&mut gplane).and(mv).for_each(|o, &mval| *o *= mval);
                        Zip::from(&mut gm).and(&gout).and(&xin).for_each(|acc, &gv, &xval| *acc += gv * xval);
                    }
                    sink(m, gm);
                }
                sink(x, gx);
            })),
        )
    }

    /// Concatenates `[Ci,H,W]` tensors along the channel axis.
    pub fn concat_channels(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let arrays: Vec<ArrayD<f64>> = parts.iter().map(|&p| self.value_ref(p)).collect();
        let (h, w) = (arrays[0].shape()[1], arrays[0].shape()[2]);
        let total: usize = arrays.iter().map(|a| a.shape()[0]).sum();
        let mut out = ArrayD::zeros(IxDyn(&[total, h, w]));
        let mut offset = 0;
        for a in &arrays {
            let c = a.shape()[0];
            out.slice_mut(ndarray::s![offset..offset + c, .., ..]).assign(a);
            offset += c;
        }
        let needs = parts.iter().any(|&p| self.needs_grad(p));
        let parts = parts.to_vec();
        let sizes: Vec<usize> = arrays.iter().map(|a| a.shape()[0]).collect();
        self.push(
            out,
            needs,
            Some(Box::new(move |_vals, g, sink| {
                let mut offset = 0;
                for (&p, &c) in parts.iter().zip(sizes.iter()) {
                    sink(p, g.slice(ndarray::s![offset..offset + c, .., ..]).to_owned().into_dyn());
                    offset += c;
                }
            })),
        )
    }

    /// Copies channels `from..to` out of a `[C,H,W]` tensor.
    pub fn slice_channels(&self, x: Var, from: usize, to: usize) -> Var {
        let xv = self.value_ref(x);
        assert!(xv.ndim() == 3 && to <= xv.shape()[0] && from < to);
        let out = xv.slice(ndarray::s![from..to, .., ..]).to_owned().into_dyn();
        let shape = xv.shape().to_vec();
        let needs = self.needs_grad(x);
        self.push(
            out,
            needs,
            Some(Box::new(move |_vals, g, sink| {
                let mut gx = ArrayD::zeros(IxDyn(&shape));
                gx.slice_mut(ndarray::s![from..to, .., ..]).assign(g);
                sink(x, gx);
            })),
        )
    }

    /// Fully connected layer on a 1-D input: `y = W·x (+ b)`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value_ref(x);
        let wv = self.value_ref(w);
        assert_eq!(xv.ndim(), 1);
        assert_eq!(wv.ndim(), 2);
        assert_eq!(wv.shape()[1], xv.shape()[0]);
        let x1 = xv.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let w2 = wv.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let mut y = w2.dot(&x1);
        if let Some(b) = b {
            let bv = self.value_ref(b);
            y += &bv.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        }
        let needs = self.needs_grad(x)
            || self.needs_grad(w)
            || b.map(|b| self.needs_grad(b)).unwrap_or(false);
        self.push(
            y.into_dyn(),
            needs,
            Some(Box::new(move |vals, g, sink| {
                let g1 = g.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                let w2 = vals[w.0].view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let x1 = vals[x.0].view().into_dimensionality::<ndarray::Ix1>().unwrap();
                sink(x, w2.t().dot(&g1).into_dyn());
                let mut gw = ndarray::Array2::<f64>::zeros(w2.raw_dim());
                for (i, gi) in g1.iter().enumerate() {
                    for (j, xj) in x1.iter().enumerate() {
                        gw[[i, j]] = gi * xj;
                    }
                }
                sink(w, gw.into_dyn());
                if let Some(b) = b {
                    sink(b, g.clone());
                }
            })),
        )
    }

    /// Depthwise Gaussian blur with a fixed (non-learnable) separable kernel
    /// and reflective boundaries; works on `[H,W]` and `[C,H,W]`.
    pub fn blur_fixed(&self, x: Var, kernel: &[f64]) -> Var {
        let xv = self.value_ref(x);
        let kernel_f: Vec<f64> = kernel.to_vec();
        fn apply(a: &ArrayD<f64>, k: &[f64], adjoint: bool) -> ArrayD<f64> {
            let run = |p: ndarray::Array2<f64>| {
                if adjoint {
                    blur_with_kernel_adjoint(&p, k)
                } else {
                    blur_with_kernel(&p, k)
                }
            };
            if a.ndim() == 2 {
                run(a.view().into_dimensionality::<ndarray::Ix2>().unwrap().to_owned()).into_dyn()
            } else {
                let mut out = a.clone();
                for mut plane in out.axis_iter_mut(Axis(0)) {
                    let p = plane.to_owned().into_dimensionality::<ndarray::Ix2>().unwrap();
                    plane.assign(&run(p).into_dyn());
                }
                out
            }
        }
        let out = apply(&xv, &kernel_f, false);
        let needs = self.needs_grad(x);
        self.push(
            out,
            needs,
            Some(Box::new(move |_vals, g, sink| {
                sink(x, apply(g, &kernel_f, true));
            })),
        )
    }
}
