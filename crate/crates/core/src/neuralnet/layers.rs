//! Layer kernels. Each forward pass returns what its backward pass needs;
//! backward passes accumulate parameter gradients into caller buffers.

use super::tensor::{gemm, Mat, Real, Tensor4};

pub(crate) const BN_EPS: f64 = 1e-5;

fn im2col<T: Real>(x: &[T], cin: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let p = k / 2;
    let hw = h * w;
    for c in 0..cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((c * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y + ky;
                    if sy < p || sy - p >= h {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(sy - p) * w..(sy - p + 1) * w];
                    // Output column x reads input column x + kx − p.
                    let lo = p.saturating_sub(kx);
                    let hi = (w + p).saturating_sub(kx).min(w);
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if lo < hi {
                        dst[lo..hi].copy_from_slice(&src[lo + kx - p..hi + kx - p]);
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], cin: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let p = k / 2;
    let hw = h * w;
    for c in 0..cin {
        let plane = &mut dx[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((c * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y + ky;
                    if sy < p || sy - p >= h {
                        continue;
                    }
                    let lo = p.saturating_sub(kx);
                    let hi = (w + p).saturating_sub(kx).min(w);
                    let dst = &mut plane[(sy - p) * w..(sy - p + 1) * w];
                    for x in lo..hi {
                        dst[x + kx - p] += row[y * w + x];
                    }
                }
            }
        }
    }
}

/// Stride-1 "same" convolution with an odd `k × k` kernel.
/// Weights are `[cout][cin·k·k]`.
pub(crate) fn conv_forward<T: Real>(x: &Tensor4<T>, w: &[T], b: &[T], cout: usize, k: usize) -> Tensor4<T> {
    let (n, cin, h, wd) = (x.n(), x.c(), x.h(), x.w());
    let hw = h * wd;
    let kk = cin * k * k;
    debug_assert_eq!(w.len(), cout * kk);
    let mut y = Tensor4::zeros([n, cout, h, wd]);
    let mut col = if k == 1 { Vec::new() } else { vec![T::zero(); kk * hw] };
    for s in 0..n {
        let out = y.sample_mut(s);
        for (co, bias) in b.iter().enumerate() {
            out[co * hw..(co + 1) * hw].fill(*bias);
        }
        let cols: &[T] = if k == 1 {
            x.sample(s)
        } else {
            im2col(x.sample(s), cin, h, wd, k, &mut col);
            &col
        };
        gemm(Mat::new(w, cout, kk), Mat::new(cols, kk, hw), T::one(), out);
    }
    y
}

pub(crate) fn conv_backward<T: Real>(
    x: &Tensor4<T>,
    w: &[T],
    dy: &Tensor4<T>,
    k: usize,
    dw: &mut [T],
    db: &mut [T],
    need_dx: bool,
) -> Option<Tensor4<T>> {
    let (n, cin, h, wd) = (x.n(), x.c(), x.h(), x.w());
    let cout = dy.c();
    let hw = h * wd;
    let kk = cin * k * k;
    let mut dx = need_dx.then(|| Tensor4::zeros(x.shape));
    let mut col = if k == 1 { Vec::new() } else { vec![T::zero(); kk * hw] };
    let mut dcol = vec![T::zero(); if need_dx && k != 1 { kk * hw } else { 0 }];
    for s in 0..n {
        let g = dy.sample(s);
        for co in 0..cout {
            let mut acc = T::zero();
            for v in &g[co * hw..(co + 1) * hw] {
                acc += *v;
            }
            db[co] += acc;
        }
        let cols: &[T] = if k == 1 {
            x.sample(s)
        } else {
            im2col(x.sample(s), cin, h, wd, k, &mut col);
            &col
        };
        gemm(Mat::new(g, cout, hw), Mat::new(cols, kk, hw).t(), T::one(), dw);
        if let Some(dx) = dx.as_mut() {
            if k == 1 {
                gemm(Mat::new(w, cout, kk).t(), Mat::new(g, cout, hw), T::zero(), dx.sample_mut(s));
            } else {
                gemm(Mat::new(w, cout, kk).t(), Mat::new(g, cout, hw), T::zero(), &mut dcol);
                col2im(&dcol, cin, h, wd, k, dx.sample_mut(s));
            }
        }
    }
    dx
}

pub(crate) struct BnCache<T> {
    xhat: Tensor4<T>,
    inv_std: Vec<T>,
}

/// Batch normalization with batch statistics; updates running estimates.
pub(crate) fn bn_forward_train<T: Real>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &mut [T],
    running_var: &mut [T],
    momentum: f64,
) -> (Tensor4<T>, BnCache<T>) {
    let (n, c) = (x.n(), x.c());
    let hw = x.h() * x.w();
    let m = (n * hw) as f64;
    let mut xhat = Tensor4::zeros(x.shape);
    let mut y = Tensor4::zeros(x.shape);
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let (mut sum, mut sq) = (0.0, 0.0);
        for s in 0..n {
            for v in x.plane(s, ch) {
                sum += v.get();
            }
        }
        let mean = sum / m;
        for s in 0..n {
            for v in x.plane(s, ch) {
                let d = v.get() - mean;
                sq += d * d;
            }
        }
        let var = sq / m;
        let is = 1.0 / (var + BN_EPS).sqrt();
        inv_std[ch] = T::of(is);
        let unbiased = if m > 1.0 { sq / (m - 1.0) } else { var };
        running_mean[ch] = T::of((1.0 - momentum) * running_mean[ch].get() + momentum * mean);
        running_var[ch] = T::of((1.0 - momentum) * running_var[ch].get() + momentum * unbiased);
        let (mu, ist, g, b) = (T::of(mean), T::of(is), gamma[ch], beta[ch]);
        for s in 0..n {
            let start = (s * c + ch) * hw;
            for i in start..start + hw {
                let xh = (x.data[i] - mu) * ist;
                xhat.data[i] = xh;
                y.data[i] = g * xh + b;
            }
        }
    }
    (y, BnCache { xhat, inv_std })
}

pub(crate) fn bn_forward_eval<T: Real>(
    x: &Tensor4<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
) -> Tensor4<T> {
    let (n, c) = (x.n(), x.c());
    let hw = x.h() * x.w();
    let mut y = Tensor4::zeros(x.shape);
    for ch in 0..c {
        let ist = T::of(1.0 / (running_var[ch].get() + BN_EPS).sqrt());
        let scale = gamma[ch] * ist;
        let shift = beta[ch] - running_mean[ch] * scale;
        for s in 0..n {
            let start = (s * c + ch) * hw;
            for i in start..start + hw {
                y.data[i] = x.data[i] * scale + shift;
            }
        }
    }
    y
}

pub(crate) fn bn_backward<T: Real>(
    cache: &BnCache<T>,
    gamma: &[T],
    dy: &Tensor4<T>,
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Tensor4<T> {
    let xhat = &cache.xhat;
    let (n, c) = (xhat.n(), xhat.c());
    let hw = xhat.h() * xhat.w();
    let m = (n * hw) as f64;
    let mut dx = Tensor4::zeros(xhat.shape);
    for ch in 0..c {
        let (mut sdy, mut sdyx) = (0.0, 0.0);
        for s in 0..n {
            let start = (s * c + ch) * hw;
            for i in start..start + hw {
                let g = dy.data[i].get();
                sdy += g;
                sdyx += g * xhat.data[i].get();
            }
        }
        dgamma[ch] += T::of(sdyx);
        dbeta[ch] += T::of(sdy);
        // dx = γ·inv_std/m · (m·dy − Σdy − x̂·Σ(dy·x̂))
        let k = T::of(gamma[ch].get() * cache.inv_std[ch].get() / m);
        let (a, b, mm) = (T::of(sdy), T::of(sdyx), T::of(m));
        for s in 0..n {
            let start = (s * c + ch) * hw;
            for i in start..start + hw {
                dx.data[i] = k * (mm * dy.data[i] - a - xhat.data[i] * b);
            }
        }
    }
    dx
}

pub(crate) fn relu_inplace<T: Real>(x: &mut Tensor4<T>) {
    for v in x.data.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `dy` by the positive entries of the ReLU output.
pub(crate) fn relu_backward<T: Real>(out: &Tensor4<T>, dy: &mut Tensor4<T>) {
    for (g, y) in dy.data.iter_mut().zip(out.data.iter()) {
        if *y <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2×2 max pooling, stride 2. Returns the flat input index of each maximum.
pub(crate) fn maxpool_forward<T: Real>(x: &Tensor4<T>) -> (Tensor4<T>, Vec<u32>) {
    let (n, c, h, w) = (x.n(), x.c(), x.h(), x.w());
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor4::zeros([n, c, oh, ow]);
    let mut arg = vec![0u32; y.data.len()];
    let mut o = 0;
    for p in 0..n * c {
        let base = p * h * w;
        for j in 0..oh {
            for i in 0..ow {
                let mut best = base + 2 * j * w + 2 * i;
                for cand in [best + 1, best + w, best + w + 1] {
                    if x.data[cand] > x.data[best] {
                        best = cand;
                    }
                }
                y.data[o] = x.data[best];
                arg[o] = best as u32;
                o += 1;
            }
        }
    }
    (y, arg)
}

pub(crate) fn maxpool_backward<T: Real>(dy: &Tensor4<T>, arg: &[u32], in_shape: [usize; 4]) -> Tensor4<T> {
    let mut dx = Tensor4::zeros(in_shape);
    for (g, &a) in dy.data.iter().zip(arg) {
        dx.data[a as usize] += *g;
    }
    dx
}

/// 2×2 transposed convolution with stride 2. Weights are `[cin][cout·4]`.
pub(crate) fn convt_forward<T: Real>(x: &Tensor4<T>, w: &[T], b: &[T], cout: usize) -> Tensor4<T> {
    let (n, cin, h, wd) = (x.n(), x.c(), x.h(), x.w());
    let hw = h * wd;
    let mut tmp = vec![T::zero(); cout * 4 * hw];
    let mut y = Tensor4::zeros([n, cout, 2 * h, 2 * wd]);
    let ow = 2 * wd;
    for s in 0..n {
        gemm(Mat::new(w, cin, cout * 4).t(), Mat::new(x.sample(s), cin, hw), T::zero(), &mut tmp);
        let out = y.sample_mut(s);
        for co in 0..cout {
            for a in 0..2 {
                for bb in 0..2 {
                    let row = &tmp[(co * 4 + a * 2 + bb) * hw..][..hw];
                    for yy in 0..h {
                        let dst = co * 4 * hw + (2 * yy + a) * ow + bb;
                        for xx in 0..wd {
                            out[dst + 2 * xx] = row[yy * wd + xx] + b[co];
                        }
                    }
                }
            }
        }
    }
    y
}

pub(crate) fn convt_backward<T: Real>(
    x: &Tensor4<T>,
    w: &[T],
    dy: &Tensor4<T>,
    dw: &mut [T],
    db: &mut [T],
) -> Tensor4<T> {
    let (n, cin, h, wd) = (x.n(), x.c(), x.h(), x.w());
    let cout = dy.c();
    let hw = h * wd;
    let ow = 2 * wd;
    let mut tmp = vec![T::zero(); cout * 4 * hw];
    let mut dx = Tensor4::zeros(x.shape);
    for s in 0..n {
        let g = dy.sample(s);
        for co in 0..cout {
            let mut acc = T::zero();
            for v in &g[co * 4 * hw..(co + 1) * 4 * hw] {
                acc += *v;
            }
            db[co] += acc;
            for a in 0..2 {
                for bb in 0..2 {
                    let row = &mut tmp[(co * 4 + a * 2 + bb) * hw..][..hw];
                    for yy in 0..h {
                        let src = co * 4 * hw + (2 * yy + a) * ow + bb;
                        for xx in 0..wd {
                            row[yy * wd + xx] = g[src + 2 * xx];
                        }
                    }
                }
            }
        }
        gemm(Mat::new(x.sample(s), cin, hw), Mat::new(&tmp, cout * 4, hw).t(), T::one(), dw);
        gemm(Mat::new(w, cin, cout * 4), Mat::new(&tmp, cout * 4, hw), T::zero(), dx.sample_mut(s));
    }
    dx
}

/// Channel concatenation `[a, b]`.
pub(crate) fn concat<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Tensor4<T> {
    debug_assert_eq!((a.n(), a.h(), a.w()), (b.n(), b.h(), b.w()));
    let mut y = Tensor4::zeros([a.n(), a.c() + b.c(), a.h(), a.w()]);
    let (la, lb) = (a.sample_len(), b.sample_len());
    for s in 0..a.n() {
        let out = y.sample_mut(s);
        out[..la].copy_from_slice(a.sample(s));
        out[la..la + lb].copy_from_slice(b.sample(s));
    }
    y
}

pub(crate) fn split<T: Real>(d: &Tensor4<T>, ca: usize) -> (Tensor4<T>, Tensor4<T>) {
    let (n, c, h, w) = (d.n(), d.c(), d.h(), d.w());
    let mut a = Tensor4::zeros([n, ca, h, w]);
    let mut b = Tensor4::zeros([n, c - ca, h, w]);
    let la = a.sample_len();
    for s in 0..n {
        let src = d.sample(s);
        a.sample_mut(s).copy_from_slice(&src[..la]);
        b.sample_mut(s).copy_from_slice(&src[la..]);
    }
    (a, b)
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: [usize; 4], scale: f64) -> Tensor4<f64> {
        let len = shape.iter().product::<usize>();
        Tensor4::from_vec(shape, (0..len).map(|i| ((i * 37 % 101) as f64 / 50.0 - 1.0) * scale).collect()).unwrap()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x = ramp([2, 3, 5, 4], 1.0);
        let (cout, k) = (2, 3);
        let w: Vec<f64> = (0..cout * 3 * 9).map(|i| (i as f64 * 0.13).sin()).collect();
        let b = vec![0.5, -0.25];
        let y = conv_forward(&x, &w, &b, cout, k);
        for s in 0..2 {
            for co in 0..cout {
                for j in 0..5 {
                    for i in 0..4 {
                        let mut acc = b[co];
                        for ci in 0..3 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let (yy, xx) = (j as isize + ky as isize - 1, i as isize + kx as isize - 1);
                                    if (0..5).contains(&yy) && (0..4).contains(&xx) {
                                        acc += w[co * 27 + ci * 9 + ky * 3 + kx]
                                            * x.data[((s * 3 + ci) * 5 + yy as usize) * 4 + xx as usize];
                                    }
                                }
                            }
                        }
                        let got = y.data[((s * cout + co) * 5 + j) * 4 + i];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        let x = ramp([2, 3, 6, 5], 1.0);
        let w: Vec<f64> = (0..4 * 27).map(|i| (i as f64 * 0.7).cos()).collect();
        let b = vec![0.0; 4];
        let dy = ramp([2, 4, 6, 5], 0.5);
        let y = conv_forward(&x, &w, &b, 4, 3);
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; 4];
        let dx = conv_backward(&x, &w, &dy, 3, &mut dw, &mut db, true).unwrap();
        // <conv(x), dy> is bilinear in (x, w).
        assert!((dot(&y.data, &dy.data) - dot(&x.data, &dx.data)).abs() < 1e-9);
        assert!((dot(&y.data, &dy.data) - dot(&w, &dw)).abs() < 1e-9);
    }

    #[test]
    fn convt_backward_is_adjoint() {
        let x = ramp([2, 3, 3, 4], 1.0);
        let w: Vec<f64> = (0..3 * 2 * 4).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = vec![0.0; 2];
        let y = convt_forward(&x, &w, &b, 2);
        assert_eq!(y.shape, [2, 2, 6, 8]);
        let dy = ramp([2, 2, 6, 8], 0.3);
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; 2];
        let dx = convt_backward(&x, &w, &dy, &mut dw, &mut db);
        assert!((dot(&y.data, &dy.data) - dot(&x.data, &dx.data)).abs() < 1e-9);
        assert!((dot(&y.data, &dy.data) - dot(&w, &dw)).abs() < 1e-9);
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let x = ramp([1, 2, 4, 4], 1.0);
        let (y, arg) = maxpool_forward(&x);
        assert_eq!(y.shape, [1, 2, 2, 2]);
        for (v, a) in y.data.iter().zip(&arg) {
            assert_eq!(*v, x.data[*a as usize]);
        }
        let dy = ramp([1, 2, 2, 2], 1.0);
        let dx = maxpool_backward(&dy, &arg, x.shape);
        assert!((dx.data.iter().sum::<f64>() - dy.data.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn concat_then_split() {
        let a = ramp([2, 1, 3, 3], 1.0);
        let b = ramp([2, 2, 3, 3], 2.0);
        let (a2, b2) = split(&concat(&a, &b), 1);
        assert_eq!((a2, b2), (a, b));
    }
}
