use rayon::prelude::*;

use super::{Layer, Param};
use crate::scalar::{matmul, matmul_at, matmul_bt, Scalar};
use crate::tensor::Tensor;
use crate::SimRng;

/// Geometry of a strided, zero-padded sliding window.
///
/// `(channels, height, width)` describe the dense image side and
/// `(out_h, out_w)` the grid of window positions. A convolution reads the
/// image side; a transposed convolution writes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Window grid for a convolution over a `channels × height × width` image.
    pub fn conv(
        channels: usize,
        height: usize,
        width: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Self {
        assert!(height + 2 * pad.0 >= kernel.0 && width + 2 * pad.1 >= kernel.1, "kernel larger than padded input");
        ConvGeom {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: (height + 2 * pad.0 - kernel.0) / stride.0 + 1,
            out_w: (width + 2 * pad.1 - kernel.1) / stride.1 + 1,
        }
    }

    /// Geometry of a transposed convolution mapping an `in_h × in_w` grid to
    /// the dense `channels × height × width` output.
    pub fn transposed(
        channels: usize,
        in_h: usize,
        in_w: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Self {
        let height = (in_h - 1) * stride.0 + kernel.0 - 2 * pad.0;
        let width = (in_w - 1) * stride.1 + kernel.1 - 2 * pad.1;
        let g = ConvGeom::conv(channels, height, width, kernel, stride, pad);
        debug_assert_eq!((g.out_h, g.out_w), (in_h, in_w));
        g
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel.0 * self.kernel.1
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn is_identity(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.pad == (0, 0)
    }
}

/// Output columns `[lo, hi)` whose input index `o·s + k − p` lies in `[0, n)`.
fn valid_range(out: usize, n: usize, k: usize, s: usize, p: usize) -> (usize, usize) {
    let lo = p.saturating_sub(k).div_ceil(s).min(out);
    // largest o with o·s + k − p ≤ n − 1
    let hi = if n + p > k { ((n + p - k - 1) / s + 1).min(out) } else { 0 };
    (lo, hi.max(lo))
}

/// Unfolds one image into a `(C·kh·kw) × (out_h·out_w)` column matrix.
pub fn im2col<T: Scalar>(g: &ConvGeom, image: &[T], cols: &mut [T]) {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.pad;
    let ncols = g.col_cols();
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..kh {
            let (ylo, yhi) = valid_range(g.out_h, g.height, ky, sh, ph);
            for kx in 0..kw {
                let (xlo, xhi) = valid_range(g.out_w, g.width, kx, sw, pw);
                let row = (c * kh + ky) * kw + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                dst[..ylo * g.out_w].fill(T::zero());
                dst[yhi * g.out_w..].fill(T::zero());
                for oy in ylo..yhi {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    let iy = oy * sh + ky - ph;
                    let src = &plane[iy * g.width..(iy + 1) * g.width];
                    line[..xlo].fill(T::zero());
                    line[xhi..].fill(T::zero());
                    let x0 = xlo * sw + kx - pw;
                    if sw == 1 {
                        line[xlo..xhi].copy_from_slice(&src[x0..x0 + xhi - xlo]);
                    } else {
                        for (v, &s) in line[xlo..xhi].iter_mut().zip(src[x0..].iter().step_by(sw)) {
                            *v = s;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters and sums a column matrix back into an image.
pub fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], image: &mut [T]) {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.pad;
    let ncols = g.col_cols();
    image.fill(T::zero());
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..kh {
            let (ylo, yhi) = valid_range(g.out_h, g.height, ky, sh, ph);
            for kx in 0..kw {
                let (xlo, xhi) = valid_range(g.out_w, g.width, kx, sw, pw);
                let row = (c * kh + ky) * kw + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in ylo..yhi {
                    let iy = oy * sh + ky - ph;
                    let dst = &mut plane[iy * g.width..(iy + 1) * g.width];
                    let line = &src[oy * g.out_w + xlo..oy * g.out_w + xhi];
                    let x0 = xlo * sw + kx - pw;
                    for (d, &v) in dst[x0..].iter_mut().step_by(sw).zip(line) {
                        *d += v;
                    }
                }
            }
        }
    }
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_channel_sums<T: Scalar>(acc: &mut [T], grad: &[T], plane: usize) {
    for (a, chunk) in acc.iter_mut().zip(grad.chunks(plane)) {
        *a += chunk.iter().copied().sum::<T>();
    }
}

/// Sums per-item gradient contributions in batch order so results do not
/// depend on the thread schedule.
fn reduce_in_order<T: Scalar>(target: &mut [T], parts: &[Vec<T>]) {
    for part in parts {
        for (t, &p) in target.iter_mut().zip(part) {
            *t += p;
        }
    }
}

/// 2-D convolution with weight layout `[C_out, C_in, kh, kw]`.
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
    cache: Option<ConvCache<T>>,
    frozen: bool,
}

struct ConvCache<T> {
    geom: ConvGeom,
    batch: usize,
    cols: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        rng: &mut SimRng,
    ) -> Self {
        let fan_in = in_channels * kernel.0 * kernel.1;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Conv2d {
            weight: Param::uniform("weight", &[out_channels, in_channels, kernel.0, kernel.1], bound, rng),
            bias: Param::uniform("bias", &[out_channels], bound, rng),
            kernel,
            stride,
            pad,
            cache: None,
            frozen: false,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn geometry(&self, height: usize, width: usize) -> ConvGeom {
        ConvGeom::conv(self.in_channels(), height, width, self.kernel, self.stride, self.pad)
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, _rng: &mut SimRng) -> Tensor<T> {
        let s = x.shape();
        assert_eq!(s.len(), 4, "conv2d expects [N, C, H, W]");
        assert_eq!(s[1], self.in_channels(), "conv2d: channel mismatch");
        let geom = self.geometry(s[2], s[3]);
        let n = s[0];
        let cout = self.out_channels();
        let (krows, ncols) = (geom.col_rows(), geom.col_cols());
        let mut out = Tensor::zeros(&[n, cout, geom.out_h, geom.out_w]);
        let mut cols = if geom.is_identity() {
            x.data().to_vec()
        } else {
            vec![T::zero(); n * krows * ncols]
        };
        let weight = self.weight.value.data();
        let bias = self.bias.value.data();
        out.data_mut()
            .par_chunks_mut(cout * ncols)
            .zip(cols.par_chunks_mut(krows * ncols))
            .zip(x.data().par_chunks(geom.image_len()))
            .for_each(|((o, c), img)| {
                if !geom.is_identity() {
                    im2col(&geom, img, c);
                }
                matmul(cout, krows, ncols, weight, c, o, false);
                add_channel_bias(o, bias, ncols);
            });
        self.cache = Some(ConvCache { geom, batch: n, cols });
        out
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.as_ref().expect("conv2d: backward before forward");
        let geom = cache.geom;
        let cout = self.out_channels();
        let (krows, ncols) = (geom.col_rows(), geom.col_cols());
        let weight = self.weight.value.data();
        let frozen = self.frozen;
        let mut gx = Tensor::zeros(&[cache.batch, geom.channels, geom.height, geom.width]);
        let parts: Vec<Option<(Vec<T>, Vec<T>)>> = gx
            .data_mut()
            .par_chunks_mut(geom.image_len())
            .zip(grad.data().par_chunks(cout * ncols))
            .zip(cache.cols.par_chunks(krows * ncols))
            .map(|((gimg, g), c)| {
                let mut gcols = vec![T::zero(); krows * ncols];
                matmul_at(krows, cout, ncols, weight, g, &mut gcols, false);
                if geom.is_identity() {
                    gimg.copy_from_slice(&gcols);
                } else {
                    col2im(&geom, &gcols, gimg);
                }
                if frozen {
                    return None;
                }
                let mut gw = vec![T::zero(); cout * krows];
                matmul_bt(cout, ncols, krows, g, c, &mut gw, false);
                let mut gb = vec![T::zero(); cout];
                accumulate_channel_sums(&mut gb, g, ncols);
                Some((gw, gb))
            })
            .collect();
        if !frozen {
            let (gws, gbs): (Vec<_>, Vec<_>) = parts.into_iter().flatten().unzip();
            reduce_in_order(self.weight.grad.data_mut(), &gws);
            reduce_in_order(self.bias.grad.data_mut(), &gbs);
        }
        gx
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }
}

/// Transposed 2-D convolution with weight layout `[C_in, C_out, kh, kw]`.
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    kernel: (usize, usize),
    stride: (usize, usize),
    pad: (usize, usize),
    cache: Option<(ConvGeom, Tensor<T>)>,
    frozen: bool,
}

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        rng: &mut SimRng,
    ) -> Self {
        let fan_in = out_channels * kernel.0 * kernel.1;
        let bound = 1.0 / (fan_in as f64).sqrt();
        ConvTranspose2d {
            weight: Param::uniform("weight", &[in_channels, out_channels, kernel.0, kernel.1], bound, rng),
            bias: Param::uniform("bias", &[out_channels], bound, rng),
            kernel,
            stride,
            pad,
            cache: None,
            frozen: false,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }
}

impl<T: Scalar> Layer<T> for ConvTranspose2d<T> {
    fn forward(&mut self, x: &Tensor<T>, _rng: &mut SimRng) -> Tensor<T> {
        let s = x.shape();
        assert_eq!(s.len(), 4, "conv_transpose2d expects [N, C, H, W]");
        assert_eq!(s[1], self.in_channels(), "conv_transpose2d: channel mismatch");
        let (n, cin, cout) = (s[0], s[1], self.out_channels());
        let geom = ConvGeom::transposed(cout, s[2], s[3], self.kernel, self.stride, self.pad);
        let (krows, ncols) = (geom.col_rows(), geom.col_cols());
        let mut out = Tensor::zeros(&[n, cout, geom.height, geom.width]);
        let weight = self.weight.value.data();
        let bias = self.bias.value.data();
        out.data_mut()
            .par_chunks_mut(geom.image_len())
            .zip(x.data().par_chunks(cin * ncols))
            .for_each(|(o, xi)| {
                let mut cols = vec![T::zero(); krows * ncols];
                matmul_at(krows, cin, ncols, weight, xi, &mut cols, false);
                col2im(&geom, &cols, o);
                add_channel_bias(o, bias, geom.height * geom.width);
            });
        self.cache = Some((geom, x.clone()));
        out
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let (geom, x) = self.cache.as_ref().expect("conv_transpose2d: backward before forward");
        let geom = *geom;
        let cin = self.in_channels();
        let (krows, ncols) = (geom.col_rows(), geom.col_cols());
        let weight = self.weight.value.data();
        let frozen = self.frozen;
        let plane = geom.height * geom.width;
        let mut gx = Tensor::zeros(x.shape());
        let parts: Vec<Option<(Vec<T>, Vec<T>)>> = gx
            .data_mut()
            .par_chunks_mut(cin * ncols)
            .zip(grad.data().par_chunks(geom.image_len()))
            .zip(x.data().par_chunks(cin * ncols))
            .map(|((gxi, g), xi)| {
                let mut gcols = vec![T::zero(); krows * ncols];
                im2col(&geom, g, &mut gcols);
                matmul(cin, krows, ncols, weight, &gcols, gxi, false);
                if frozen {
                    return None;
                }
                let mut gw = vec![T::zero(); cin * krows];
                matmul_bt(cin, ncols, krows, xi, &gcols, &mut gw, false);
                let mut gb = vec![T::zero(); geom.channels];
                accumulate_channel_sums(&mut gb, g, plane);
                Some((gw, gb))
            })
            .collect();
        if !frozen {
            let (gws, gbs): (Vec<_>, Vec<_>) = parts.into_iter().flatten().unzip();
            reduce_in_order(self.weight.grad.data_mut(), &gws);
            reduce_in_order(self.bias.grad.data_mut(), &gbs);
        }
        gx
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn naive_conv(x: &[f64], w: &[f64], b: &[f64], cin: usize, h: usize, wd: usize, cout: usize, g: &ConvGeom) -> Vec<f64> {
        let (kh, kw) = g.kernel;
        let mut out = vec![0.0; cout * g.out_h * g.out_w];
        for o in 0..cout {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = b[o];
                    for c in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * g.stride.0 + ky) as isize - g.pad.0 as isize;
                                let ix = (ox * g.stride.1 + kx) as isize - g.pad.1 as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += w[((o * cin + c) * kh + ky) * kw + kx] * x[(c * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                    }
                    out[(o * g.out_h + oy) * g.out_w + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = SimRng::seed_from_u64(3);
        let mut conv = Conv2d::<f64>::new(2, 3, (4, 4), (2, 2), (1, 1), &mut rng);
        let x: Vec<f64> = (0..2 * 7 * 9).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let t = Tensor::from_vec(&[1, 2, 7, 9], x.clone());
        let y = conv.forward(&t, &mut rng);
        let g = conv.geometry(7, 9);
        let expect = naive_conv(&x, conv.weight.value.data(), conv.bias.value.data(), 2, 7, 9, 3, &g);
        assert_eq!(y.shape(), &[1, 3, g.out_h, g.out_w]);
        for (a, b) in y.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom::conv(2, 6, 5, (3, 3), (2, 1), (1, 1));
        let x: Vec<f64> = (0..g.image_len()).map(|i| (i as f64 * 0.7).cos()).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.col_cols()).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut cx = vec![0.0; y.len()];
        im2col(&g, &x, &mut cx);
        let mut ty = vec![0.0; x.len()];
        col2im(&g, &y, &mut ty);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&ty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn transposed_conv_doubles_resolution() {
        let mut rng = SimRng::seed_from_u64(5);
        let mut up = ConvTranspose2d::<f32>::new(4, 2, (4, 4), (2, 2), (1, 1), &mut rng);
        let y = up.forward(&Tensor::full(&[3, 4, 15, 20], 0.1), &mut rng);
        assert_eq!(y.shape(), &[3, 2, 30, 40]);
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv_without_bias() {
        // <conv(x), y> == <x, convT(y)> when both share the same kernel.
        let mut rng = SimRng::seed_from_u64(9);
        let mut conv = Conv2d::<f64>::new(2, 3, (4, 4), (2, 2), (1, 1), &mut rng);
        let mut convt = ConvTranspose2d::<f64>::new(3, 2, (4, 4), (2, 2), (1, 1), &mut rng);
        convt.weight.value = conv.weight.value.clone().reshape(&[3, 2, 4, 4]);
        conv.bias.value.fill(0.0);
        convt.bias.value.fill(0.0);
        let x = Tensor::from_vec(&[1, 2, 8, 10], (0..160).map(|i| (i as f64 * 0.13).sin()).collect());
        let y = Tensor::from_vec(&[1, 3, 4, 5], (0..60).map(|i| (i as f64 * 0.29).cos()).collect());
        let cx = conv.forward(&x, &mut rng);
        let ty = convt.forward(&y, &mut rng);
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
