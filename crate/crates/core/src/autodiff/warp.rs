//! Differentiable bilinear warping by a displacement field.

use ndarray::{Array3, Ix3};

use super::{Tape, Var};

/// Samples `img[c]` at `(i + flow[0,i,j], j + flow[1,i,j])` with bilinear
/// interpolation; continuous coordinates are clamped to the image rectangle.
/// A zero displacement reproduces the input bit-for-bit.
pub fn warp_bilinear_raw(img: &Array3<f64>, flow: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = img.dim();
    assert_eq!(flow.dim(), (2, h, w), "flow must be [2,H,W]");
    let mut out = Array3::zeros((c, h, w));
    for i in 0..h {
        for j in 0..w {
            let y = (i as f64 + flow[[0, i, j]]).clamp(0.0, (h - 1) as f64);
            let x = (j as f64 + flow[[1, i, j]]).clamp(0.0, (w - 1) as f64);
            let i0 = y.floor() as usize;
            let j0 = x.floor() as usize;
            let i1 = (i0 + 1).min(h - 1);
            let j1 = (j0 + 1).min(w - 1);
            let fy = y - i0 as f64;
            let fx = x - j0 as f64;
            for ch in 0..c {
                let v00 = img[[ch, i0, j0]];
                let v01 = img[[ch, i0, j1]];
                let v10 = img[[ch, i1, j0]];
                let v11 = img[[ch, i1, j1]];
                out[[ch, i, j]] = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01)
                    + fy * ((1.0 - fx) * v10 + fx * v11);
            }
        }
    }
    out
}

impl Tape {
    /// Differentiable warp of `img: [C,H,W]` by `flow: [2,H,W]` (pixel
    /// units, row displacement first). Gradients flow into both arguments;
    /// positions pushed outside the image by clamping contribute zero flow
    /// gradient.
    pub fn warp_bilinear(&self, img: Var, flow: Var) -> Var {
        let iv = self.value(img);
        let fv = self.value(flow);
        let i3 = iv.view().into_dimensionality::<Ix3>().unwrap();
        let f3 = fv.view().into_dimensionality::<Ix3>().unwrap();
        let out = warp_bilinear_raw(&i3.to_owned(), &f3.to_owned());
        let (c, h, w) = i3.dim();
        let needs = self.needs_grad(img) || self.needs_grad(flow);
        self.push(
            out.into_dyn(),
            needs,
            Some(Box::new(move |vals, g, sink| {
                let i3 = vals[img.0].view().into_dimensionality::<Ix3>().unwrap();
                let f3 = vals[flow.0].view().into_dimensionality::<Ix3>().unwrap();
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let mut gimg = Array3::<f64>::zeros((c, h, w));
                let mut gflow = Array3::<f64>::zeros((2, h, w));
                for i in 0..h {
                    for j in 0..w {
                        let y_raw = i as f64 + f3[[0, i, j]];
                        let x_raw = j as f64 + f3[[1, i, j]];
                        let y = y_raw.clamp(0.0, (h - 1) as f64);
                        let x = x_raw.clamp(0.0, (w - 1) as f64);
                        let in_y = (0.0..=(h - 1) as f64).contains(&y_raw);
                        let in_x = (0.0..=(w - 1) as f64).contains(&x_raw);
                        let i0 = y.floor() as usize;
                        let j0 = x.floor() as usize;
                        let i1 = (i0 + 1).min(h - 1);
                        let j1 = (j0 + 1).min(w - 1);
                        let fy = y - i0 as f64;
                        let fx = x - j0 as f64;
                        for ch in 0..c {
                            let gv = g3[[ch, i, j]];
                            if gv == 0.0 {
                                continue;
                            }
                            let v00 = i3[[ch, i0, j0]];
                            let v01 = i3[[ch, i0, j1]];
                            let v10 = i3[[ch, i1, j0]];
                            let v11 = i3[[ch, i1, j1]];
                            gimg[[ch, i0, j0]] += gv * (1.0 - fy) * (1.0 - fx);
                            gimg[[ch, i0, j1]] += gv * (1.0 - fy) * fx;
                            gimg[[ch, i1, j0]] += gv * fy * (1.0 - fx);
                            gimg[[ch, i1, j1]] += gv * fy * fx;
                            if in_y {
                                gflow[[0, i, j]] += gv
                                    * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
                            }
                            if in_x {
                                gflow[[1, i, j]] += gv
                                    * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
                            }
                        }
                    }
                }
                sink(img, gimg.into_dyn());
                sink(flow, gflow.into_dyn());
            })),
        )
    }
}
