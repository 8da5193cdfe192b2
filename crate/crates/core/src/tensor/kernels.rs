//! Raw loops behind the graph operations. All buffers are row-major.

use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Zero padding applied to the two spatial axes of a convolution input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn symmetric(h: usize, w: usize) -> Self {
        Padding {
            top: h,
            bottom: h,
            left: w,
            right: w,
        }
    }

    /// Padding along the width axis that keeps the output width equal to the
    /// input width. Even kernels put the extra column on the right.
    pub fn same_width(kernel_w: usize) -> Self {
        let left = (kernel_w - 1) / 2;
        Padding {
            top: 0,
            bottom: 0,
            left,
            right: kernel_w - 1 - left,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub cpg: usize,
    pub kh: usize,
    pub kw: usize,
    pub groups: usize,
    pub pad: Padding,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(xs: &[usize], ks: &[usize], groups: usize, pad: Padding) -> Result<Self> {
        if xs.len() != 4 {
            return Err(Error::shape("input rank", format!("expected [N,C,H,W], got {xs:?}")));
        }
        if ks.len() != 4 {
            return Err(Error::shape(
                "kernel rank",
                format!("expected [Cout,Cin/groups,kH,kW], got {ks:?}"),
            ));
        }
        if groups == 0 {
            return Err(Error::invalid("groups", "must be positive"));
        }
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, cpg, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if cin % groups != 0 {
            return Err(Error::shape(
                "input channels",
                format!("{cin} channels not divisible by {groups} groups"),
            ));
        }
        if cout % groups != 0 {
            return Err(Error::shape(
                "output channels",
                format!("{cout} kernels not divisible by {groups} groups"),
            ));
        }
        if cpg * groups != cin {
            return Err(Error::shape(
                "kernel channels",
                format!("kernel has {cpg} channels per group, input implies {}", cin / groups),
            ));
        }
        let ph = h + pad.top + pad.bottom;
        let pw = w + pad.left + pad.right;
        if kh > ph {
            return Err(Error::shape(
                "kernel height",
                format!("kernel height {kh} exceeds padded input height {ph}"),
            ));
        }
        if kw > pw {
            return Err(Error::shape(
                "kernel width",
                format!("kernel width {kw} exceeds padded input width {pw}"),
            ));
        }
        Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            cpg,
            kh,
            kw,
            groups,
            pad,
            oh: ph - kh + 1,
            ow: pw - kw + 1,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.cout, self.oh, self.ow]
    }

    /// Output columns `lo..hi` whose input column `ox + j - left` is in range.
    #[inline]
    fn col_range(&self, j: usize) -> Option<(usize, usize)> {
        let lo = self.pad.left.saturating_sub(j);
        let hi = self.ow.min((self.w + self.pad.left).saturating_sub(j));
        (lo < hi).then_some((lo, hi))
    }

    #[inline]
    fn in_row(&self, oy: usize, i: usize) -> Option<usize> {
        let y = oy + i;
        (y >= self.pad.top && y - self.pad.top < self.h).then(|| y - self.pad.top)
    }

    /// Visit every (output plane, input plane, kernel tap) triple.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let opg = self.cout / self.groups;
        for b in 0..self.n {
            for co in 0..self.cout {
                let grp = co / opg;
                for cig in 0..self.cpg {
                    let ci = grp * self.cpg + cig;
                    let out_plane = (b * self.cout + co) * self.oh * self.ow;
                    let in_plane = (b * self.cin + ci) * self.h * self.w;
                    for i in 0..self.kh {
                        for j in 0..self.kw {
                            let tap = ((co * self.cpg + cig) * self.kh + i) * self.kw + j;
                            f(out_plane, in_plane, tap, i, j);
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Float>(x: &[T], k: &[T], g: &ConvGeom) -> Vec<T> {
    let mut out = vec![T::zero(); g.n * g.cout * g.oh * g.ow];
    g.for_each_tap(|op, ip, tap, i, j| {
        let wv = k[tap];
        let Some((lo, hi)) = g.col_range(j) else { return };
        for oy in 0..g.oh {
            let Some(iy) = g.in_row(oy, i) else { continue };
            let orow = &mut out[op + oy * g.ow + lo..op + oy * g.ow + hi];
            let start = ip + iy * g.w + lo + j - g.pad.left;
            let irow = &x[start..start + (hi - lo)];
            for (o, &v) in orow.iter_mut().zip(irow) {
                *o += wv * v;
            }
        }
    });
    out
}

pub(crate) fn conv2d_backward_input<T: Float>(dy: &[T], k: &[T], g: &ConvGeom) -> Vec<T> {
    let mut dx = vec![T::zero(); g.n * g.cin * g.h * g.w];
    g.for_each_tap(|op, ip, tap, i, j| {
        let wv = k[tap];
        let Some((lo, hi)) = g.col_range(j) else { return };
        for oy in 0..g.oh {
            let Some(iy) = g.in_row(oy, i) else { continue };
            let drow = &dy[op + oy * g.ow + lo..op + oy * g.ow + hi];
            let start = ip + iy * g.w + lo + j - g.pad.left;
            let xrow = &mut dx[start..start + (hi - lo)];
            for (d, &v) in xrow.iter_mut().zip(drow) {
                *d += wv * v;
            }
        }
    });
    dx
}

pub(crate) fn conv2d_backward_kernel<T: Float>(dy: &[T], x: &[T], g: &ConvGeom) -> Vec<T> {
    let mut dk = vec![T::zero(); g.cout * g.cpg * g.kh * g.kw];
    g.for_each_tap(|op, ip, tap, i, j| {
        let Some((lo, hi)) = g.col_range(j) else { return };
        let mut acc = T::zero();
        for oy in 0..g.oh {
            let Some(iy) = g.in_row(oy, i) else { continue };
            let drow = &dy[op + oy * g.ow + lo..op + oy * g.ow + hi];
            let start = ip + iy * g.w + lo + j - g.pad.left;
            let xrow = &x[start..start + (hi - lo)];
            for (&d, &v) in drow.iter().zip(xrow) {
                acc += d * v;
            }
        }
        dk[tap] += acc;
    });
    dk
}

pub(crate) fn avg_pool_forward<T: Float>(x: &[T], s: &[usize], ph: usize, pw: usize) -> Vec<T> {
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / ph, w / pw);
    let scale = T::one() / T::of((ph * pw) as f64);
    let mut out = vec![T::zero(); n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for y in 0..h {
            for xx in 0..w {
                dst[(y / ph) * ow + xx / pw] += src[y * w + xx];
            }
        }
        for v in dst.iter_mut() {
            *v *= scale;
        }
    }
    out
}

pub(crate) fn avg_pool_backward<T: Float>(dy: &[T], s: &[usize], ph: usize, pw: usize) -> Vec<T> {
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / ph, w / pw);
    let scale = T::one() / T::of((ph * pw) as f64);
    let mut dx = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let src = &dy[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                dst[y * w + xx] = src[(y / ph) * ow + xx / pw] * scale;
            }
        }
    }
    dx
}

/// `x[N,F] · w[F,K] + b[K]`.
pub(crate) fn dense_forward<T: Float>(x: &[T], w: &[T], b: &[T], n: usize, f: usize, k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * k);
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    for r in 0..n {
        let orow = &mut out[r * k..(r + 1) * k];
        for c in 0..f {
            let xv = x[r * f + c];
            for (o, &wv) in orow.iter_mut().zip(&w[c * k..(c + 1) * k]) {
                *o += xv * wv;
            }
        }
    }
    out
}

/// Row-wise softmax of a `[N,K]` tensor with max subtraction.
pub fn softmax_rows<T: Float>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let s = logits.shape();
    if s.len() != 2 {
        return Err(Error::shape("logits rank", format!("expected [N,K], got {s:?}")));
    }
    let k = s[1];
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Tensor::new(s.to_vec(), out)
}
