//! Raw kernels over row-major slices.

use super::Float;

/// `out[m,n] += a[m,k] · b[k,n]`
pub(crate) fn gemm_nn<T: Float>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] · b[k,n]ᵀ`
pub(crate) fn gemm_nt<T: Float>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc = acc + gv * bv;
            }
            out[i * k + p] = out[i * k + p] + acc;
        }
    }
}

/// `out[k,n] += a[m,k]ᵀ · g[m,n]`
pub(crate) fn gemm_tn<T: Float>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o = *o + av * gv;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    /// Input row/col for an output position and kernel offset, if inside.
    #[inline]
    fn src(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky) as isize - self.pad as isize;
        let x = (ox * self.stride + kx) as isize - self.pad as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some((y as usize, x as usize))
        }
    }
}

pub(crate) fn conv2d_forward<T: Float>(g: &ConvGeom, input: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let mut out = vec![T::zero(); g.o * g.ho * g.wo];
    for o in 0..g.o {
        let b = bias.map_or(T::zero(), |b| b[o]);
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let mut acc = b;
                for c in 0..g.c {
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            if let Some((y, x)) = g.src(oy, ox, ky, kx) {
                                acc = acc
                                    + weight[((o * g.c + c) * g.kh + ky) * g.kw + kx]
                                        * input[(c * g.h + y) * g.w + x];
                            }
                        }
                    }
                }
                out[(o * g.ho + oy) * g.wo + ox] = acc;
            }
        }
    }
    out
}

/// Returns (d input, d weight, d bias).
pub(crate) fn conv2d_backward<T: Float>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    grad: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut di = vec![T::zero(); input.len()];
    let mut dw = vec![T::zero(); weight.len()];
    let mut db = vec![T::zero(); g.o];
    for o in 0..g.o {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let go = grad[(o * g.ho + oy) * g.wo + ox];
                if go == T::zero() {
                    continue;
                }
                db[o] = db[o] + go;
                for c in 0..g.c {
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            if let Some((y, x)) = g.src(oy, ox, ky, kx) {
                                let wi = ((o * g.c + c) * g.kh + ky) * g.kw + kx;
                                let ii = (c * g.h + y) * g.w + x;
                                dw[wi] = dw[wi] + go * input[ii];
                                di[ii] = di[ii] + go * weight[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    (di, dw, db)
}

/// Splits a shape around `axis` into (outer, axis length, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
