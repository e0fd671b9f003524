//! Raw conv / pool kernels over flat NCHW buffers.

use super::gemm;

/// `floor((size + 2 * pad - kernel) / stride) + 1`, or `None` when the
/// kernel does not fit.
pub fn conv2d_output_extent(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if kernel == 0 || stride == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub fn pool_output_extent(size: usize, kernel: usize, stride: usize) -> Option<usize> {
    conv2d_output_extent(size, kernel, stride, 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn in_image(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Unfolds one image `[C,H,W]` into `[C*kh*kw, Ho*Wo]`.
fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let plane = g.out_plane();
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    let seg = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(0.0);
                        continue;
                    }
                    let src = &x[(ci * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, v) in seg.iter_mut().enumerate() {
                        let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                        *v = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into `[C,H,W]`.
fn col2im(g: &ConvGeom, cols: &[f64], dx: &mut [f64]) {
    let plane = g.out_plane();
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(ci * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let plane = g.out_plane();
    let mut out = vec![0.0; g.n * g.k * plane];
    let mut cols = vec![0.0; g.patch() * plane];
    for n in 0..g.n {
        im2col(g, &x[n * g.in_image()..(n + 1) * g.in_image()], &mut cols);
        let dst = &mut out[n * g.k * plane..(n + 1) * g.k * plane];
        gemm(g.k, g.patch(), plane, 1.0, kernel, false, &cols, false, 0.0, dst);
    }
    out
}

/// Returns `(d_input, d_kernel)`; `d_input` is skipped when not wanted.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    kernel: &[f64],
    dout: &[f64],
    want_dx: bool,
    want_dk: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let plane = g.out_plane();
    let patch = g.patch();
    let mut dk = want_dk.then(|| vec![0.0; g.k * patch]);
    let mut dx = want_dx.then(|| vec![0.0; g.n * g.in_image()]);
    let mut cols = vec![0.0; patch * plane];
    for n in 0..g.n {
        let dy = &dout[n * g.k * plane..(n + 1) * g.k * plane];
        if let Some(dk) = dk.as_mut() {
            im2col(g, &x[n * g.in_image()..(n + 1) * g.in_image()], &mut cols);
            // dK += dY [K, P] * cols^T [P, patch]
            gemm(g.k, plane, patch, 1.0, dy, false, &cols, true, 1.0, dk);
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = K^T [patch, K] * dY [K, P]
            gemm(patch, g.k, plane, 1.0, kernel, true, dy, false, 0.0, &mut cols);
            col2im(g, &cols, &mut dx[n * g.in_image()..(n + 1) * g.in_image()]);
        }
    }
    (dx, dk)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolGeom {
    pub nc: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ho: usize,
    pub wo: usize,
}

/// Max over each window; ties keep the first element in row-major window
/// order. Returns values and the flat input index of each winner.
pub(crate) fn maxpool_forward(g: &PoolGeom, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(g.nc * g.ho * g.wo);
    let mut arg = Vec::with_capacity(out.capacity());
    for p in 0..g.nc {
        let base = p * g.h * g.w;
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let i = base + (oy * g.sh + ki) * g.w + ox * g.sw + kj;
                        if best_i == usize::MAX || x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}
