//! 3D convolution with per-axis padding mode.
//!
//! Input layout is `(A, B, K, C_in)` — two angular axes, the subcarrier
//! axis, then channels — with filters `(F, F, F, C_in, C_out)`, stride 1,
//! and "same" padding of `(F - 1) / 2` on every spatial axis so feature-map
//! dimensions never change. The angular axes typically use circular padding
//! (the sine grid wraps at ±1), the subcarrier axis zero padding.

use super::tensor::Tensor;

/// How an axis is padded: wrap around or pad with zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Circular,
    Zero,
}

/// Circular on both angular axes, zero on the subcarrier axis.
pub const ANGULAR_CIRCULAR: [PadMode; 3] = [PadMode::Circular, PadMode::Circular, PadMode::Zero];

#[inline]
fn resolve(idx: i64, dim: usize, mode: PadMode) -> Option<usize> {
    if idx >= 0 && (idx as usize) < dim {
        return Some(idx as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Circular => Some(idx.rem_euclid(dim as i64) as usize),
    }
}

fn dims(x: &Tensor, w: &Tensor, bias: &Tensor) -> (usize, usize, usize, usize, usize, usize) {
    let xs = x.shape();
    let ws = w.shape();
    assert_eq!(xs.len(), 4, "conv3d input must be (A, B, K, C_in)");
    assert_eq!(ws.len(), 5, "conv3d filters must be (F, F, F, C_in, C_out)");
    assert_eq!(ws[0], ws[1], "conv3d filters must be cubic");
    assert_eq!(ws[1], ws[2], "conv3d filters must be cubic");
    assert!(ws[0] % 2 == 1, "filter size must be odd for same padding");
    assert_eq!(ws[3], xs[3], "conv3d: C_in mismatch");
    assert_eq!(bias.numel(), ws[4], "conv3d: bias length must equal C_out");
    (xs[0], xs[1], xs[2], xs[3], ws[0], ws[4])
}

pub fn conv3d_forward(x: &Tensor, w: &Tensor, bias: &Tensor, pads: [PadMode; 3]) -> Tensor {
    let (na, nb, nk, c_in, f, c_out) = dims(x, w, bias);
    let pad = (f as i64 - 1) / 2;
    let mut out = Tensor::zeros(&[na, nb, nk, c_out]);
    let xd = x.data();
    let wd = w.data();
    let bd = bias.data();
    let od = out.data_mut();
    for a in 0..na {
        for b in 0..nb {
            for k in 0..nk {
                let obase = ((a * nb + b) * nk + k) * c_out;
                od[obase..obase + c_out].copy_from_slice(bd);
                for da in 0..f {
                    let Some(sa) = resolve(a as i64 + da as i64 - pad, na, pads[0]) else {
                        continue;
                    };
                    for db in 0..f {
                        let Some(sb) = resolve(b as i64 + db as i64 - pad, nb, pads[1]) else {
                            continue;
                        };
                        for dk in 0..f {
                            let Some(sk) = resolve(k as i64 + dk as i64 - pad, nk, pads[2])
                            else {
                                continue;
                            };
                            let xbase = ((sa * nb + sb) * nk + sk) * c_in;
                            let wbase = (((da * f + db) * f + dk) * c_in) * c_out;
                            for ci in 0..c_in {
                                let xv = xd[xbase + ci];
                                if xv == 0.0 {
                                    continue;
                                }
                                let wrow = &wd[wbase + ci * c_out..wbase + (ci + 1) * c_out];
                                for (o, &wv) in od[obase..obase + c_out].iter_mut().zip(wrow) {
                                    *o += xv * wv;
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

/// Gradients with respect to the input, the filters, and the bias.
pub fn conv3d_backward(
    x: &Tensor,
    w: &Tensor,
    upstream: &Tensor,
    pads: [PadMode; 3],
) -> (Tensor, Tensor, Tensor) {
    let bias = Tensor::zeros(&[w.shape()[4]]);
    let (na, nb, nk, c_in, f, c_out) = dims(x, w, &bias);
    assert_eq!(upstream.shape(), &[na, nb, nk, c_out], "upstream shape");
    let pad = (f as i64 - 1) / 2;
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[c_out]);
    let xd = x.data();
    let wd = w.data();
    let gd = upstream.data();
    for a in 0..na {
        for b in 0..nb {
            for k in 0..nk {
                let obase = ((a * nb + b) * nk + k) * c_out;
                let grow = &gd[obase..obase + c_out];
                for (acc, &gv) in gb.data_mut().iter_mut().zip(grow) {
                    *acc += gv;
                }
                for da in 0..f {
                    let Some(sa) = resolve(a as i64 + da as i64 - pad, na, pads[0]) else {
                        continue;
                    };
                    for db in 0..f {
                        let Some(sb) = resolve(b as i64 + db as i64 - pad, nb, pads[1]) else {
                            continue;
                        };
                        for dk in 0..f {
                            let Some(sk) = resolve(k as i64 + dk as i64 - pad, nk, pads[2])
                            else {
                                continue;
                            };
                            let xbase = ((sa * nb + sb) * nk + sk) * c_in;
                            let wbase = (((da * f + db) * f + dk) * c_in) * c_out;
                            for ci in 0..c_in {
                                let xv = xd[xbase + ci];
                                let wrow = &wd[wbase + ci * c_out..wbase + (ci + 1) * c_out];
                                let mut acc = 0.0;
                                let gwrow = &mut gw.data_mut()
                                    [wbase + ci * c_out..wbase + (ci + 1) * c_out];
                                for ((&gv, &wv), gwv) in
                                    grow.iter().zip(wrow).zip(gwrow.iter_mut())
                                {
                                    acc += gv * wv;
                                    *gwv += gv * xv;
                                }
                                gx.data_mut()[xbase + ci] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}
