//! Differentiable centered unitary FFT on channel pairs.
//!
//! Complex feature maps are stored as `[2C,H,W]` real tensors: channels
//! `0..C` hold real parts, `C..2C` imaginary parts. Because the centered
//! unitary DFT is an orthogonal map of that real representation, the adjoint
//! (and hence the backward pass) of `fft2c` is exactly `ifft2c` and vice
//! versa.

use ndarray::{Array2, ArrayD, Ix3, IxDyn};
use num_complex::Complex64;

use super::{Tape, Var};
use crate::grid::{fft2c_raw, ifft2c_raw};

fn pairs_to_complex(a: &ArrayD<f64>, c: usize, h: usize, w: usize) -> Vec<Array2<Complex64>> {
    let a3 = a.view().into_dimensionality::<Ix3>().unwrap();
    (0..c)
        .map(|ch| {
            Array2::from_shape_fn((h, w), |(i, j)| {
                Complex64::new(a3[[ch, i, j]], a3[[c + ch, i, j]])
            })
        })
        .collect()
}

fn complex_to_pairs(planes: &[Array2<Complex64>], h: usize, w: usize) -> ArrayD<f64> {
    let c = planes.len();
    let mut out = ArrayD::zeros(IxDyn(&[2 * c, h, w]));
    for (ch, plane) in planes.iter().enumerate() {
        for i in 0..h {
            for j in 0..w {
                out[[ch, i, j]] = plane[[i, j]].re;
                out[[c + ch, i, j]] = plane[[i, j]].im;
            }
        }
    }
    out
}

fn transform_pairs(a: &ArrayD<f64>, forward: bool) -> ArrayD<f64> {
    let shape = a.shape();
    assert_eq!(shape.len(), 3, "fft pairs expect [2C,H,W]");
    assert_eq!(shape[0] % 2, 0, "fft pairs expect an even channel count");
    let (c, h, w) = (shape[0] / 2, shape[1], shape[2]);
    let planes = pairs_to_complex(a, c, h, w);
    let transformed: Vec<Array2<Complex64>> = planes
        .iter()
        .map(|p| if forward { fft2c_raw(p) } else { ifft2c_raw(p) })
        .collect();
    complex_to_pairs(&transformed, h, w)
}

impl Tape {
    /// Appends zero imaginary channels: `[C,H,W] -> [2C,H,W]`.
    pub fn real_to_complex(&self, x: Var) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.ndim(), 3);
        let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let mut out = ArrayD::zeros(IxDyn(&[2 * c, h, w]));
        out.slice_mut(ndarray::s![0..c, .., ..]).assign(&xv);
        let needs = self.needs_grad(x);
        self.push(
            out,
            needs,
            Some(Box::new(move |_vals, g, sink| {
                sink(x, g.slice(ndarray::s![0..c, .., ..]).to_owned().into_dyn());
            })),
        )
    }

    /// Real part of a `[2C,H,W]` pair tensor.
    pub fn complex_real(&self, x: Var) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.ndim(), 3);
        assert_eq!(xv.shape()[0] % 2, 0);
        let c = xv.shape()[0] / 2;
        let shape = xv.shape().to_vec();
        let out = xv.slice(ndarray::s![0..c, .., ..]).to_owned().into_dyn();
        let needs = self.needs_grad(x);
        self.push(
            out,
            needs,
            Some(Box::new(move |_vals, g, sink| {
                let mut gx = ArrayD::zeros(IxDyn(&shape));
                gx.slice_mut(ndarray::s![0..c, .., ..]).assign(g);
                sink(x, gx);
            })),
        )
    }

    /// Element-wise complex magnitude of a pair tensor, `[2C,H,W] -> [C,H,W]`.
    /// The subgradient at exactly zero magnitude is taken as zero.
    pub fn complex_magnitude(&self, x: Var) -> Var {
        let xv = self.value(x);
        let x3 = xv.view().into_dimensionality::<Ix3>().unwrap();
        let (c2, h, w) = x3.dim();
        let c = c2 / 2;
        let mut out = ArrayD::zeros(IxDyn(&[c, h, w]));
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    out[[ch, i, j]] = x3[[ch, i, j]].hypot(x3[[c + ch, i, j]]);
                }
            }
        }
        let needs = self.needs_grad(x);
        self.push(
            out,
            needs,
            Some(Box::new(move |vals, g, sink| {
                let x3 = vals[x.0].view().into_dimensionality::<Ix3>().unwrap();
                let mut gx = ArrayD::zeros(IxDyn(&[c2, h, w]));
                for ch in 0..c {
                    for i in 0..h {
                        for j in 0..w {
                            let (re, im) = (x3[[ch, i, j]], x3[[c + ch, i, j]]);
                            let mag = re.hypot(im);
                            if mag > 0.0 {
                                let gv = g[[ch, i, j]] / mag;
                                gx[[ch, i, j]] = gv * re;
                                gx[[c + ch, i, j]] = gv * im;
                            }
                        }
                    }
                }
                sink(x, gx);
            })),
        )
    }

    /// Centered unitary FFT of each channel pair.
    pub fn fft2c_pairs(&self, x: Var) -> Var {
        let out = transform_pairs(&self.value(x), true);
        let needs = self.needs_grad(x);
        self.push(
            out,
            needs,
            Some(Box::new(move |_vals, g, sink| {
                sink(x, transform_pairs(g, false));
            })),
        )
    }

    /// Centered unitary inverse FFT of each channel pair.
    pub fn ifft2c_pairs(&self, x: Var) -> Var {
        let out = transform_pairs(&self.value(x), false);
        let needs = self.needs_grad(x);
        self.push(
            out,
            needs,
            Some(Box::new(move |_vals, g, sink| {
                sink(x, transform_pairs(g, true));
            })),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::check_gradient;
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn arr(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn fft_round_trip_on_tape() {
        let t = Tape::new();
        let x = t.constant(arr(&[4, 8, 8], 1));
        let k = t.fft2c_pairs(x);
        let back = t.ifft2c_pairs(k);
        let (xv, bv) = (t.value(x), t.value(back));
        for (a, b) in xv.iter().zip(bv.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_backward_is_the_adjoint() {
        // <F x, y> == <x, F⁻¹ y> in the real pair representation.
        let x = arr(&[2, 6, 6], 2);
        let y = arr(&[2, 6, 6], 3);
        let fx = transform_pairs(&x, true);
        let fty = transform_pairs(&y, false);
        let lhs: f64 = fx.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(fty.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn masked_fft_pipeline_matches_fd() {
        // Through r2c -> fft -> spatial mask -> ifft -> real part.
        check_gradient(
            |t, x| {
                let mask = t.constant(arr(&[6, 6], 4).mapv(|v| (v + 0.5).clamp(0.0, 1.0)));
                let k = t.fft2c_pairs(t.real_to_complex(x));
                let masked = t.mul_spatial(k, mask);
                let img = t.complex_real(t.ifft2c_pairs(masked));
                t.mean(t.mul(img, img))
            },
            arr(&[1, 6, 6], 5),
            1e-7,
        );
    }

    #[test]
    fn magnitude_matches_fd_away_from_zero() {
        check_gradient(
            |t, x| {
                let shifted = t.add_scalar(x, 2.0); // keep magnitudes well away from 0
                let m = t.complex_magnitude(shifted);
                t.mean(t.mul(m, m))
            },
            arr(&[2, 5, 5], 6),
            1e-7,
        );
    }

    #[test]
    fn magnitude_zero_has_zero_subgradient() {
        let t = Tape::new();
        let x = t.leaf(ArrayD::zeros(IxDyn(&[2, 4, 4])));
        let m = t.complex_magnitude(x);
        let loss = t.sum(m);
        let g = t.backward(loss);
        assert!(g.get(x).unwrap().iter().all(|&v| v == 0.0));
    }
}
