//! Convolution kernels shared by the forward and backward passes.
//!
//! Loops run over (output channel, input channel, tap) with the innermost
//! loop along a row, so the stride-1 case is a contiguous axpy.

use super::tensor::Tensor;

/// Output extent of a convolution along one axis.
pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (len + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

/// Range of output positions whose input tap `t` lands inside `[0, len)`.
#[inline]
fn valid_range(t: usize, stride: usize, pad: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > t { (pad - t).div_ceil(stride) } else { 0 };
    let hi = match (len + pad).checked_sub(t + 1) {
        Some(last) => (last / stride + 1).min(out_len),
        None => 0,
    };
    (lo, hi.max(lo))
}

/// `x`: `[n, ci, h, w]`, `w`: `[co, ci, k, k]`, `b`: `[1, co, 1, 1]`.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let [n, ci, h, wd] = x.shape();
    let [co, _, k, _] = w.shape();
    let oh = conv_out_len(h, k, stride, pad).expect("checked by caller");
    let ow = conv_out_len(wd, k, stride, pad).expect("checked by caller");
    let mut out = Tensor::zeros([n, co, oh, ow]);
    let wv = w.data();
    for b_i in 0..n {
        for o in 0..co {
            let plane = out.plane_mut(b_i, o);
            if let Some(b) = b {
                plane.fill(b.data()[o]);
            }
            for c in 0..ci {
                let inp = x.plane(b_i, c);
                for ky in 0..k {
                    let (ylo, yhi) = valid_range(ky, stride, pad, h, oh);
                    for kx in 0..k {
                        let wt = wv[((o * ci + c) * k + ky) * k + kx];
                        let (xlo, xhi) = valid_range(kx, stride, pad, wd, ow);
                        for oy in ylo..yhi {
                            let iy = oy * stride + ky - pad;
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            let irow = &inp[iy * wd..(iy + 1) * wd];
                            if stride == 1 {
                                let src = &irow[xlo + kx - pad..xhi + kx - pad];
                                for (d, s) in orow[xlo..xhi].iter_mut().zip(src) {
                                    *d += wt * s;
                                }
                            } else {
                                for ox in xlo..xhi {
                                    orow[ox] += wt * irow[ox * stride + kx - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
    pad: usize,
) -> (Tensor, Tensor, Tensor) {
    let [n, ci, h, wd] = x.shape();
    let [co, _, k, _] = w.shape();
    let [_, _, oh, ow] = dy.shape();
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros([1, co, 1, 1]);
    for b_i in 0..n {
        for o in 0..co {
            let g = dy.plane(b_i, o);
            db.data_mut()[o] += crate::metrics::pairwise_sum(g);
            for c in 0..ci {
                let inp = x.plane(b_i, c);
                for ky in 0..k {
                    let (ylo, yhi) = valid_range(ky, stride, pad, h, oh);
                    for kx in 0..k {
                        let widx = ((o * ci + c) * k + ky) * k + kx;
                        let wt = w.data()[widx];
                        let (xlo, xhi) = valid_range(kx, stride, pad, wd, ow);
                        let mut acc = 0.0;
                        let dxp = dx.plane_mut(b_i, c);
                        for oy in ylo..yhi {
                            let iy = oy * stride + ky - pad;
                            let grow = &g[oy * ow..(oy + 1) * ow];
                            let irow = &inp[iy * wd..(iy + 1) * wd];
                            let drow = &mut dxp[iy * wd..(iy + 1) * wd];
                            if stride == 1 {
                                let (n, i0) = (xhi - xlo, xlo + kx - pad);
                                let gs = &grow[xlo..xhi];
                                let is = &irow[i0..i0 + n];
                                let ds = &mut drow[i0..i0 + n];
                                for j in 0..n {
                                    acc += gs[j] * is[j];
                                    ds[j] += wt * gs[j];
                                }
                            } else {
                                for ox in xlo..xhi {
                                    let ix = ox * stride + kx - pad;
                                    acc += grow[ox] * irow[ix];
                                    drow[ix] += wt * grow[ox];
                                }
                            }
                        }
                        dw.data_mut()[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// 2×2 stride-2 transposed convolution. `w`: `[ci, co, 2, 2]`.
pub fn conv_t2_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let [n, ci, h, wd] = x.shape();
    let co = w.shape()[1];
    let (oh, ow) = (2 * h, 2 * wd);
    let mut out = Tensor::zeros([n, co, oh, ow]);
    for b_i in 0..n {
        for o in 0..co {
            let plane = out.plane_mut(b_i, o);
            if let Some(b) = b {
                plane.fill(b.data()[o]);
            }
            for c in 0..ci {
                let inp = x.plane(b_i, c);
                for dy in 0..2 {
                    for dxo in 0..2 {
                        let wt = w.data()[((c * co + o) * 2 + dy) * 2 + dxo];
                        for y in 0..h {
                            let orow = &mut plane[(2 * y + dy) * ow..(2 * y + dy + 1) * ow];
                            let irow = &inp[y * wd..(y + 1) * wd];
                            for (xx, v) in irow.iter().enumerate() {
                                orow[2 * xx + dxo] += wt * v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv_t2_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let [n, ci, h, wd] = x.shape();
    let co = w.shape()[1];
    let ow = 2 * wd;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros([1, co, 1, 1]);
    for b_i in 0..n {
        for o in 0..co {
            let g = dy.plane(b_i, o);
            db.data_mut()[o] += crate::metrics::pairwise_sum(g);
            for c in 0..ci {
                let inp = x.plane(b_i, c);
                for sy in 0..2 {
                    for sx in 0..2 {
                        let widx = ((c * co + o) * 2 + sy) * 2 + sx;
                        let wt = w.data()[widx];
                        let mut acc = 0.0;
                        let dxp = dx.plane_mut(b_i, c);
                        for y in 0..h {
                            let grow = &g[(2 * y + sy) * ow..(2 * y + sy + 1) * ow];
                            for xx in 0..wd {
                                let gv = grow[2 * xx + sx];
                                acc += gv * inp[y * wd + xx];
                                dxp[y * wd + xx] += wt * gv;
                            }
                        }
                        dw.data_mut()[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct definition with explicit bounds checks.
    fn conv_naive(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        let [n, ci, h, wd] = x.shape();
        let [co, _, k, _] = w.shape();
        let oh = conv_out_len(h, k, stride, pad).unwrap();
        let ow = conv_out_len(wd, k, stride, pad).unwrap();
        let mut out = vec![0.0; n * co * oh * ow];
        for b in 0..n {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        s += w.get(o, c, ky, kx) * x.get(b, c, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        out[((b * co + o) * oh + oy) * ow + ox] = s;
                    }
                }
            }
        }
        Tensor::from_vec([n, co, oh, ow], out).unwrap()
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, stride, pad, h, w) in [(3, 1, 1, 5, 7), (3, 2, 1, 8, 6), (3, 2, 1, 7, 5), (1, 1, 0, 4, 4), (3, 1, 0, 6, 6)] {
            let x = Tensor::uniform([2, 3, h, w], 1.0, &mut rng);
            let wt = Tensor::uniform([4, 3, k, k], 1.0, &mut rng);
            let fast = conv2d_forward(&x, &wt, None, stride, pad);
            let slow = conv_naive(&x, &wt, stride, pad);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::uniform([1, 1, 5, 6], 1.0, &mut rng);
        let mut w = Tensor::zeros([1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        assert_eq!(conv2d_forward(&x, &w, None, 1, 1), x);
    }

    #[test]
    fn transposed_conv_places_taps() {
        let x = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv_t2_forward(&x, &w, None);
        assert_eq!(y.shape(), [1, 1, 2, 4]);
        assert_eq!(y.data(), &[1.0, 2.0, 2.0, 4.0, 3.0, 4.0, 6.0, 8.0]);
    }
}
