use alloc::vec::Vec;

use super::TheoryError;
use crate::linalg::{Mat, Vector};

/// Position of block `(r, c)` in the block-vectorized order.
#[inline]
pub fn slot(r: usize, c: usize, k: usize) -> usize {
    c * k + r
}

/// Stacks the column-major vectorizations of the `M×M` blocks of a
/// `KM×KM` matrix, block columns outermost.
pub fn bvec(sigma: &Mat, k: usize, m: usize) -> Result<Vector, TheoryError> {
    if sigma.shape() != (k * m, k * m) {
        return Err(TheoryError::ShapeError("bvec expects a KM x KM matrix"));
    }
    let mm = m * m;
    let mut out = Vector::zeros(k * k * mm);
    for c in 0..k {
        for r in 0..k {
            let base = slot(r, c, k) * mm;
            for j in 0..m {
                for i in 0..m {
                    out[base + j * m + i] = sigma[(r * m + i, c * m + j)];
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`bvec`].
pub fn unbvec(v: &Vector, k: usize, m: usize) -> Result<Mat, TheoryError> {
    let mm = m * m;
    if v.len() != k * k * mm {
        return Err(TheoryError::ShapeError("unbvec expects a vector of length (KM)^2"));
    }
    let mut out = Mat::zeros(k * m, k * m);
    for c in 0..k {
        for r in 0..k {
            let base = slot(r, c, k) * mm;
            for j in 0..m {
                for i in 0..m {
                    out[(r * m + i, c * m + j)] = v[base + j * m + i];
                }
            }
        }
    }
    Ok(out)
}

/// Block Kronecker product: block `((i,j),(p,q))` is `A_jq ⊗ B_ip`, so that
/// `bvec(B Σ Aᵀ) = (A ⊗_b B) bvec(Σ)`.
pub fn block_kron(a: &Mat, b: &Mat, k: usize, m: usize) -> Result<Mat, TheoryError> {
    let n = k * m;
    if a.shape() != (n, n) || b.shape() != (n, n) {
        return Err(TheoryError::ShapeError("block_kron expects KM x KM inputs"));
    }
    let mm = m * m;
    let mut out = Mat::zeros(k * k * mm, k * k * mm);
    for q in 0..k {
        for p in 0..k {
            let col0 = slot(p, q, k) * mm;
            for j in 0..k {
                for i in 0..k {
                    let row0 = slot(i, j, k) * mm;
                    // (A_jq ⊗ B_ip)[(x*M + y), (u*M + v)] = A_jq[x,u] B_ip[y,v]
                    for u in 0..m {
                        for x in 0..m {
                            let av = a[(j * m + x, q * m + u)];
                            if av == 0.0 {
                                continue;
                            }
                            for v in 0..m {
                                for y in 0..m {
                                    out[(row0 + x * m + y, col0 + u * m + v)] = av * b[(i * m + y, p * m + v)];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Square matrix made of equal-sized diagonal blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagonal {
    pub blocks: Vec<Mat>,
}

impl BlockDiagonal {
    pub fn block_size(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.nrows())
    }

    pub fn dim(&self) -> usize {
        self.blocks.len() * self.block_size()
    }

    pub fn identity(count: usize, size: usize) -> Self {
        Self {
            blocks: (0..count).map(|_| Mat::identity(size, size)).collect(),
        }
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        let s = self.block_size();
        let mut out = Vector::zeros(v.len());
        for (n, b) in self.blocks.iter().enumerate() {
            out.rows_mut(n * s, s).copy_from(&(b * v.rows(n * s, s)));
        }
        out
    }

    pub fn apply_transpose(&self, v: &Vector) -> Vector {
        let s = self.block_size();
        let mut out = Vector::zeros(v.len());
        for (n, b) in self.blocks.iter().enumerate() {
            out.rows_mut(n * s, s).copy_from(&(b.tr_mul(&v.rows(n * s, s))));
        }
        out
    }

    pub fn pow(&self, e: usize) -> Self {
        Self {
            blocks: self.blocks.iter().map(|b| b.pow(e as u32)).collect(),
        }
    }

    pub fn to_dense(&self) -> Mat {
        let s = self.block_size();
        let mut out = Mat::zeros(self.dim(), self.dim());
        for (n, b) in self.blocks.iter().enumerate() {
            out.view_mut((n * s, n * s), (s, s)).copy_from(b);
        }
        out
    }
}
