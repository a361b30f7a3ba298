//! Slice-level loops behind the graph ops. Every reduction runs in
//! ascending index order so single-threaded results are bit-reproducible.

use super::Scalar;

/// `out[m×n] = a[m×k] · b[k×n]`.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    out
}

/// `da += dc · bᵀ`, `db += aᵀ · dc`.
pub fn matmul_backward<T: Scalar>(
    a: &[T],
    b: &[T],
    dc: &[T],
    m: usize,
    k: usize,
    n: usize,
    da: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    if let Some(da) = da {
        for i in 0..m {
            let dcrow = &dc[i * n..(i + 1) * n];
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                da[i * k + p] = da[i * k + p] + dot(dcrow, brow);
            }
        }
    }
    if let Some(db) = db {
        for i in 0..m {
            let dcrow = &dc[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = a[i * k + p];
                let dbrow = &mut db[p * n..(p + 1) * n];
                for (d, &g) in dbrow.iter_mut().zip(dcrow) {
                    *d = *d + aip * g;
                }
            }
        }
    }
}

/// `out[m] = a[m×k] · x[k]`.
pub fn matvec<T: Scalar>(a: &[T], x: &[T], m: usize, k: usize) -> Vec<T> {
    (0..m).map(|i| dot(&a[i * k..(i + 1) * k], x)).collect()
}

pub fn matvec_backward<T: Scalar>(
    a: &[T],
    x: &[T],
    dy: &[T],
    m: usize,
    k: usize,
    da: Option<&mut [T]>,
    dx: Option<&mut [T]>,
) {
    if let Some(da) = da {
        for i in 0..m {
            let g = dy[i];
            let row = &mut da[i * k..(i + 1) * k];
            for (d, &xv) in row.iter_mut().zip(x) {
                *d = *d + g * xv;
            }
        }
    }
    if let Some(dx) = dx {
        for i in 0..m {
            let g = dy[i];
            let row = &a[i * k..(i + 1) * k];
            for (d, &av) in dx.iter_mut().zip(row) {
                *d = *d + av * g;
            }
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

/// Shape bookkeeping for a batched valid-padding cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.height - self.kernel_h) / self.stride_h + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width - self.kernel_w) / self.stride_w + 1
    }

    fn in_index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.in_channels + c) * self.height + y) * self.width + x
    }

    fn filter_index(&self, o: usize, c: usize, i: usize, j: usize) -> usize {
        ((o * self.in_channels + c) * self.kernel_h + i) * self.kernel_w + j
    }
}

pub fn conv2d<T: Scalar>(input: &[T], filters: &[T], bias: &[T], g: &ConvGeometry) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = Vec::with_capacity(g.batch * g.out_channels * oh * ow);
    for n in 0..g.batch {
        for o in 0..g.out_channels {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = T::zero();
                    for c in 0..g.in_channels {
                        for i in 0..g.kernel_h {
                            let irow = g.in_index(n, c, y * g.stride_h + i, x * g.stride_w);
                            let frow = g.filter_index(o, c, i, 0);
                            for j in 0..g.kernel_w {
                                acc = acc + input[irow + j] * filters[frow + j];
                            }
                        }
                    }
                    out.push(acc + bias[o]);
                }
            }
        }
    }
    out
}

pub fn conv2d_backward<T: Scalar>(
    input: &[T],
    filters: &[T],
    dout: &[T],
    g: &ConvGeometry,
    mut dinput: Option<&mut [T]>,
    mut dfilters: Option<&mut [T]>,
    mut dbias: Option<&mut [T]>,
) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut idx = 0;
    for n in 0..g.batch {
        for o in 0..g.out_channels {
            for y in 0..oh {
                for x in 0..ow {
                    let d = dout[idx];
                    idx += 1;
                    if let Some(db) = dbias.as_deref_mut() {
                        db[o] = db[o] + d;
                    }
                    for c in 0..g.in_channels {
                        for i in 0..g.kernel_h {
                            let irow = g.in_index(n, c, y * g.stride_h + i, x * g.stride_w);
                            let frow = g.filter_index(o, c, i, 0);
                            if let Some(df) = dfilters.as_deref_mut() {
                                for j in 0..g.kernel_w {
                                    df[frow + j] = df[frow + j] + d * input[irow + j];
                                }
                            }
                            if let Some(di) = dinput.as_deref_mut() {
                                for j in 0..g.kernel_w {
                                    di[irow + j] = di[irow + j] + d * filters[frow + j];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
