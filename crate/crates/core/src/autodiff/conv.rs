//! 2-D convolution (im2col + GEMM) and nearest-neighbor upsampling.

use ndarray::{Array2, Array3, Array4, ArrayD, ArrayView3, Ix3, Ix4, IxDyn};

use super::{Tape, Var};

fn out_size(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

fn im2col(x: &ArrayView3<f64>, kh: usize, kw: usize, stride: usize, pad: usize) -> Array2<f64> {
    let (cin, h, w) = x.dim();
    let (oh, ow) = (out_size(h, kh, stride, pad), out_size(w, kw, stride, pad));
    let mut cols = Array2::zeros((cin * kh * kw, oh * ow));
    for c in 0..cin {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let mut idx = 0usize;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        idx += ow;
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            cols[[row, idx]] = x[[c, iy as usize, ix as usize]];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
    cols
}

fn col2im(
    cols: &Array2<f64>,
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array3<f64> {
    let (oh, ow) = (out_size(h, kh, stride, pad), out_size(w, kw, stride, pad));
    let mut x = Array3::zeros((cin, h, w));
    for c in 0..cin {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let mut idx = 0usize;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        idx += ow;
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            x[[c, iy as usize, ix as usize]] += cols[[row, idx]];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
    x
}

impl Tape {
    /// Convolution of `x: [Cin,H,W]` with `w: [Cout,Cin,kh,kw]`, zero
    /// padding, optional `[Cout]` bias.
    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let x3 = xv.view().into_dimensionality::<Ix3>().expect("conv2d input must be [C,H,W]");
        let w4 = wv.view().into_dimensionality::<Ix4>().expect("conv2d weight must be [O,I,kh,kw]");
        let (cin, h, wd) = x3.dim();
        let (cout, win, kh, kw) = w4.dim();
        assert_eq!(cin, win, "conv2d: channel mismatch");
        let (oh, ow) = (out_size(h, kh, stride, pad), out_size(wd, kw, stride, pad));

        let cols = im2col(&x3, kh, kw, stride, pad);
        let w_mat = w4.to_shape((cout, cin * kh * kw)).unwrap();
        let mut y = w_mat.dot(&cols); // [cout, oh*ow]
        if let Some(b) = b {
            let bv = self.value(b);
            for (mut row, &bias) in y.rows_mut().into_iter().zip(bv.iter()) {
                row += bias;
            }
        }
        let out = y.into_shape_with_order((cout, oh, ow)).unwrap().into_dyn();

        let needs = self.needs_grad(x)
            || self.needs_grad(w)
            || b.map(|b| self.needs_grad(b)).unwrap_or(false);
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, g, sink| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let g_mat = g3.to_shape((cout, oh * ow)).unwrap();
                let x3 = vals[x.0].view().into_dimensionality::<Ix3>().unwrap();
                let w4 = vals[w.0].view().into_dimensionality::<Ix4>().unwrap();
                // Weight gradient: dW = dY · colsᵀ (cols recomputed to keep
                // tape memory proportional to activations, not workspaces).
                let cols = im2col(&x3, kh, kw, stride, pad);
                let gw = g_mat.dot(&cols.t());
                sink(
                    w,
                    gw.into_shape_with_order((cout, cin, kh, kw)).unwrap().into_dyn(),
                );
                if let Some(b) = b {
                    let gb: Vec<f64> = g_mat.rows().into_iter().map(|r| r.sum()).collect();
                    sink(b, ArrayD::from_shape_vec(IxDyn(&[cout]), gb).unwrap());
                }
                // Input gradient: scatter Wᵀ·dY back through im2col.
                let w_mat = w4.to_shape((cout, cin * kh * kw)).unwrap();
                let gcols = w_mat.t().dot(&g_mat);
                sink(x, col2im(&gcols, cin, h, wd, kh, kw, stride, pad).into_dyn());
            })),
        )
    }

    /// Nearest-neighbor 2× upsampling of `[C,H,W]`.
    pub fn upsample_nearest2(&self, x: Var) -> Var {
        let xv = self.value(x);
        let x3 = xv.view().into_dimensionality::<Ix3>().expect("upsample input must be [C,H,W]");
        let (c, h, w) = x3.dim();
        let mut out = Array3::zeros((c, 2 * h, 2 * w));
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let v = x3[[ci, i, j]];
                    out[[ci, 2 * i, 2 * j]] = v;
                    out[[ci, 2 * i + 1, 2 * j]] = v;
                    out[[ci, 2 * i, 2 * j + 1]] = v;
                    out[[ci, 2 * i + 1, 2 * j + 1]] = v;
                }
            }
        }
        let needs = self.needs_grad(x);
        self.push(
            out.into_dyn(),
            needs,
            Some(Box::new(move |_vals, g, sink| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let mut gx = Array3::zeros((c, h, w));
                for ci in 0..c {
                    for i in 0..h {
                        for j in 0..w {
                            gx[[ci, i, j]] = g3[[ci, 2 * i, 2 * j]]
                                + g3[[ci, 2 * i + 1, 2 * j]]
                                + g3[[ci, 2 * i, 2 * j + 1]]
                                + g3[[ci, 2 * i + 1, 2 * j + 1]];
                        }
                    }
                }
                sink(x, gx.into_dyn());
            })),
        )
    }
}

/// Direct convolution used by gradient-check oracles and the classical-mode
/// feature transforms: `y[o] = Σ_i w[o,i] ⊛ x[i]` with zero padding.
pub fn conv2d_direct(x: &Array3<f64>, w: &Array4<f64>, stride: usize, pad: usize) -> Array3<f64> {
    let (cin, h, wd) = x.dim();
    let (cout, win, kh, kw) = w.dim();
    assert_eq!(cin, win);
    let (oh, ow) = (out_size(h, kh, stride, pad), out_size(wd, kw, stride, pad));
    let mut y = Array3::zeros((cout, oh, ow));
    for o in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for i in 0..cin {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            acc += w[[o, i, ky, kx]] * x[[i, iy as usize, ix as usize]];
                        }
                    }
                }
                y[[o, oy, ox]] = acc;
            }
        }
    }
    y
}

/// Exact adjoint of [`conv2d_direct`] with stride 1: `(Aᵀy)[i] = Σ_o`
/// correlation of `y[o]` with the flipped kernel `w[o,i]`.
pub fn conv2d_direct_adjoint(y: &Array3<f64>, w: &Array4<f64>, pad: usize) -> Array3<f64> {
    let (cout, oh, ow) = y.dim();
    let (wout, cin, kh, kw) = w.dim();
    assert_eq!(cout, wout);
    // With stride 1 and "same" padding the input and output sizes agree.
    let (h, wd) = (oh, ow);
    let mut x = Array3::zeros((cin, h, wd));
    for o in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = y[[o, oy, ox]];
                if g == 0.0 {
                    continue;
                }
                for i in 0..cin {
                    for ky in 0..kh {
                        let iy = (oy + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox + kx) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            x[[i, iy as usize, ix as usize]] += g * w[[o, i, ky, kx]];
                        }
                    }
                }
            }
        }
    }
    x
}
