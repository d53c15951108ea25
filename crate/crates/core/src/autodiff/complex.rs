//! Complex values on the tape as paired real tensors.
//!
//! Gradients are taken with respect to the real and imaginary parts
//! separately, which for real-valued losses is equivalent to Wirtinger
//! calculus. The complex solve is routed through one real block system
//! `[[Ar, -Ai], [Ai, Ar]]`, whose transpose is exactly the block form of
//! `A^H` — so the real adjoint-solve backward rule is the complex one.

use num_complex::Complex64;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::cmat::CMat;
use crate::Result;

/// A complex tape value: two same-shape real nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CVar {
    pub re: Var,
    pub im: Var,
}

/// Splits a complex matrix into real/imaginary tensors of shape
/// `(rows, cols)`.
pub fn cmat_to_tensors(m: &CMat) -> (Tensor, Tensor) {
    let shape = [m.rows(), m.cols()];
    let re = Tensor::from_vec(&shape, m.data().iter().map(|z| z.re).collect());
    let im = Tensor::from_vec(&shape, m.data().iter().map(|z| z.im).collect());
    (re, im)
}

/// Reassembles a complex matrix from paired 2D tensors.
pub fn tensors_to_cmat(re: &Tensor, im: &Tensor) -> CMat {
    assert_eq!(re.shape(), im.shape());
    assert_eq!(re.shape().len(), 2);
    let (rows, cols) = (re.shape()[0], re.shape()[1]);
    let data: Vec<Complex64> = re
        .data()
        .iter()
        .zip(im.data())
        .map(|(&r, &i)| Complex64::new(r, i))
        .collect();
    CMat::from_vec(rows, cols, data)
}

impl Tape {
    /// Loads a complex matrix as a constant pair.
    pub fn cinput(&self, m: &CMat) -> CVar {
        let (re, im) = cmat_to_tensors(m);
        CVar {
            re: self.input(re),
            im: self.input(im),
        }
    }

    /// Loads a complex matrix as a trainable pair.
    pub fn cparam(&self, m: &CMat) -> CVar {
        let (re, im) = cmat_to_tensors(m);
        CVar {
            re: self.param(re),
            im: self.param(im),
        }
    }

    /// Current complex value of a pair (2D only).
    pub fn cvalue(&self, z: CVar) -> CMat {
        tensors_to_cmat(&self.value(z.re), &self.value(z.im))
    }

    pub fn cadd(&self, a: CVar, b: CVar) -> CVar {
        CVar {
            re: self.add(a.re, b.re),
            im: self.add(a.im, b.im),
        }
    }

    pub fn csub(&self, a: CVar, b: CVar) -> CVar {
        CVar {
            re: self.sub(a.re, b.re),
            im: self.sub(a.im, b.im),
        }
    }

    /// Elementwise complex multiply.
    pub fn cmul(&self, a: CVar, b: CVar) -> CVar {
        CVar {
            re: self.sub(self.mul(a.re, b.re), self.mul(a.im, b.im)),
            im: self.add(self.mul(a.re, b.im), self.mul(a.im, b.re)),
        }
    }

    /// Complex matrix product from four real products.
    pub fn cmatmul(&self, a: CVar, b: CVar) -> CVar {
        CVar {
            re: self.sub(self.matmul(a.re, b.re), self.matmul(a.im, b.im)),
            im: self.add(self.matmul(a.re, b.im), self.matmul(a.im, b.re)),
        }
    }

    /// Conjugate transpose of a complex pair.
    pub fn cconj_t(&self, a: CVar) -> CVar {
        CVar {
            re: self.transpose(a.re),
            im: self.neg(self.transpose(a.im)),
        }
    }

    /// `A^{-1} B` over complex pairs through the real block embedding.
    pub fn csolve(&self, a: CVar, b: CVar) -> Result<CVar> {
        let n = self.shape(a.re)[0];
        let top = self.concat(&[a.re, self.neg(a.im)], 1);
        let bottom = self.concat(&[a.im, a.re], 1);
        let block = self.concat(&[top, bottom], 0);
        let rhs = self.concat(&[b.re, b.im], 0);
        let sol = self.linear_solve(block, rhs)?;
        Ok(CVar {
            re: self.slice(sol, 0, 0, n),
            im: self.slice(sol, 0, n, n),
        })
    }

    /// Squared modulus `|z|^2 = re^2 + im^2`, a real tensor.
    pub fn csqmod(&self, z: CVar) -> Var {
        self.add(self.mul(z.re, z.re), self.mul(z.im, z.im))
    }

    /// Scales complex columns by a real vector (for `Φ diag(γ)`).
    pub fn cmul_bcast_row(&self, a: CVar, v: Var) -> CVar {
        CVar {
            re: self.mul_bcast_row(a.re, v),
            im: self.mul_bcast_row(a.im, v),
        }
    }

    /// Complex Kronecker product.
    pub fn ckron(&self, a: CVar, b: CVar) -> CVar {
        CVar {
            re: self.sub(self.kron(a.re, b.re), self.kron(a.im, b.im)),
            im: self.add(self.kron(a.re, b.im), self.kron(a.im, b.re)),
        }
    }

    pub fn cscale(&self, a: CVar, c: f64) -> CVar {
        CVar {
            re: self.scale(a.re, c),
            im: self.scale(a.im, c),
        }
    }

    /// Phase-shifter mapping `θ -> (cos θ, sin θ) / sqrt(n_norm)`: every
    /// induced entry has modulus exactly `1 / sqrt(n_norm)`.
    pub fn phase_to_complex(&self, theta: Var, n_norm: usize) -> CVar {
        let s = 1.0 / (n_norm as f64).sqrt();
        CVar {
            re: self.scale(self.cos(theta), s),
            im: self.scale(self.sin(theta), s),
        }
    }
}
