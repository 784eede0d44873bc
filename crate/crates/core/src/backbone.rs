//! Small trainable conv stack producing the `C x H x W` feature map.
//!
//! Each block is `conv3x3 (zero pad 1, stride 1) -> ReLU -> maxpool 2x2`, so
//! every downsampling step is a pooling step and the pixel-to-cell stride is
//! exactly `2^blocks`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{glorot, Param, Rng, Tensor};

pub const KERNEL: usize = 3;
pub const POOL: usize = 2;
pub const INPUT_CHANNELS: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Output channels of each conv block.
    pub blocks: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            blocks: vec![8, 16, 32],
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() || self.blocks.contains(&0) {
            return Err(Error::Config(format!(
                "backbone blocks must be non-empty positive channel counts, got {:?}",
                self.blocks
            )));
        }
        Ok(())
    }

    pub fn downsample(&self) -> usize {
        1 << self.blocks.len()
    }

    pub fn out_channels(&self) -> usize {
        *self.blocks.last().expect("validated non-empty")
    }

    /// Smallest square image the pooling cascade accepts.
    pub fn min_image_size(&self) -> usize {
        self.downsample() * 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub tensor: Tensor,
    pub downsample: usize,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.tensor.dims()[0]
    }
    pub fn height(&self) -> usize {
        self.tensor.dims()[1]
    }
    pub fn width(&self) -> usize {
        self.tensor.dims()[2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub weight: Param,
    pub bias: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub blocks: Vec<ConvBlock>,
}

impl Backbone {
    pub fn new(config: BackboneConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut cin = INPUT_CHANNELS;
        let mut blocks = Vec::with_capacity(config.blocks.len());
        for (b, &cout) in config.blocks.iter().enumerate() {
            let dims = [cout, cin, KERNEL, KERNEL];
            let area = KERNEL * KERNEL;
            blocks.push(ConvBlock {
                weight: Param::new(
                    format!("backbone.{b}.weight"),
                    glorot(&dims, cin * area, cout * area, rng),
                ),
                bias: Param::zeros(format!("backbone.{b}.bias"), &[cout]),
            });
            cin = cout;
        }
        Ok(Backbone { config, blocks })
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        self.blocks.iter().flat_map(|b| [&b.weight, &b.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.blocks
            .iter_mut()
            .flat_map(|b| [&mut b.weight, &mut b.bias])
    }

    pub fn forward(&self, image: &Tensor) -> Result<FeatureMap> {
        self.forward_cached(image).map(|(fm, _)| fm)
    }

    pub fn forward_cached(&self, image: &Tensor) -> Result<(FeatureMap, BackboneCache)> {
        let dims = image.dims();
        if dims.len() != 3 || dims[0] != INPUT_CHANNELS {
            return Err(Error::Shape(format!(
                "backbone expects a 1xSxS image, got {dims:?}"
            )));
        }
        let min = self.config.min_image_size();
        if dims[1] < min || dims[2] < min {
            return Err(Error::Shape(format!(
                "image {}x{} too small for {} pooling stages: minimum size is {min}",
                dims[1],
                dims[2],
                self.blocks.len()
            )));
        }
        let mut x = image.clone();
        let mut layers = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let pre = conv2d_forward(&x, &block.weight.value, &block.bias.value)?;
            let mut act = pre.clone();
            act.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            let (pooled, argmax) = maxpool2(&act)?;
            layers.push(BlockCache {
                input: x,
                pre_activation: pre,
                argmax,
            });
            x = pooled;
        }
        let fm = FeatureMap {
            tensor: x,
            downsample: self.config.downsample(),
        };
        Ok((fm, BackboneCache { layers }))
    }

    /// Gradients for every block, in the order of [`Backbone::params`].
    pub fn backward(&self, cache: &BackboneCache, grad_out: &Tensor) -> Result<Vec<Tensor>> {
        let mut grads = vec![Tensor::zeros(&[0]); 2 * self.blocks.len()];
        let mut upstream = grad_out.clone();
        for (b, (block, layer)) in self.blocks.iter().zip(&cache.layers).enumerate().rev() {
            let mut grad_act =
                maxpool2_backward(&upstream, &layer.argmax, layer.pre_activation.dims());
            for (g, pre) in grad_act
                .data_mut()
                .iter_mut()
                .zip(layer.pre_activation.data())
            {
                if *pre <= 0.0 {
                    *g = 0.0;
                }
            }
            let need_input = b > 0;
            let (gi, gw, gb) =
                conv_backward_impl(&layer.input, &block.weight.value, &grad_act, need_input)?;
            grads[2 * b] = gw;
            grads[2 * b + 1] = gb;
            if let Some(gi) = gi {
                upstream = gi;
            }
        }
        Ok(grads)
    }
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    pub input: Tensor,
    pub pre_activation: Tensor,
    pub argmax: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct BackboneCache {
    pub layers: Vec<BlockCache>,
}

impl BackboneCache {
    /// Smallest distance of any ReLU pre-activation from the kink, and of any
    /// live pooling window's maximum from its runner-up.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for layer in &self.layers {
            for v in layer.pre_activation.data() {
                margin = margin.min(v.abs());
            }
            let d = layer.pre_activation.dims();
            let (c, h, w) = (d[0], d[1], d[2]);
            for ch in 0..c {
                for py in 0..h / 2 {
                    for px in 0..w / 2 {
                        let mut vals = [0.0f64; 4];
                        for (k, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                            vals[k] = layer
                                .pre_activation
                                .at3(ch, 2 * py + dy, 2 * px + dx)
                                .max(0.0);
                        }
                        vals.sort_by(|a, b| b.total_cmp(a));
                        if vals[0] > 0.0 {
                            margin = margin.min(vals[0] - vals[1]);
                        }
                    }
                }
            }
        }
        margin
    }
}

fn conv_dims(input: &Tensor, weights: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (id, wd) = (input.dims(), weights.dims());
    if id.len() != 3 || wd.len() != 4 || wd[2] != KERNEL || wd[3] != KERNEL {
        return Err(Error::Shape(format!(
            "conv2d expects input CxHxW and weights Cout x Cin x 3 x 3, got {id:?} and {wd:?}"
        )));
    }
    if id[0] != wd[1] {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input has {} channels, weights expect {}",
            id[0], wd[1]
        )));
    }
    if id[1] == 0 || id[2] == 0 {
        return Err(Error::Shape(
            "conv2d input has an empty spatial dimension".into(),
        ));
    }
    Ok((wd[0], id[0], id[1], id[2]))
}

/// Valid output index range along one axis for kernel offset `k`: positions
/// `y` where `y + k - 1` lies inside `[0, n)`.
fn valid_range(k: usize, n: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { n - 1 } else { n };
    (lo, hi.max(lo))
}

/// 3x3 cross-correlation, zero padding 1, stride 1. Every output entry is
/// `bias + Σ w·x` accumulated in `(cin, ky, kx)` order.
pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (cout, cin, h, w) = conv_dims(input, weights)?;
    if bias.len() != cout {
        return Err(Error::Shape(format!(
            "conv2d bias has {} entries, expected {cout}",
            bias.len()
        )));
    }
    let mut out = Tensor::zeros(&[cout, h, w]);
    let x = input.data();
    let wt = weights.data();
    let plane = h * w;
    for o in 0..cout {
        let out_plane = &mut out.data_mut()[o * plane..(o + 1) * plane];
        out_plane.fill(bias.data()[o]);
        for c in 0..cin {
            let in_plane = &x[c * plane..(c + 1) * plane];
            for ky in 0..KERNEL {
                let (y0, y1) = valid_range(ky, h);
                for kx in 0..KERNEL {
                    let wv = wt[((o * cin + c) * KERNEL + ky) * KERNEL + kx];
                    let (x0, x1) = valid_range(kx, w);
                    for y in y0..y1 {
                        let src_row = (y + ky - 1) * w;
                        let dst = &mut out_plane[y * w + x0..y * w + x1];
                        let src = &in_plane[src_row + x0 + kx - 1..src_row + x1 + kx - 1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (gi, gw, gb) = conv_backward_impl(input, weights, upstream, true)?;
    Ok((gi.expect("requested"), gw, gb))
}

fn conv_backward_impl(
    input: &Tensor,
    weights: &Tensor,
    upstream: &Tensor,
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let (cout, cin, h, w) = conv_dims(input, weights)?;
    if upstream.dims() != [cout, h, w] {
        return Err(Error::Shape(format!(
            "conv2d upstream {:?} does not match output [{cout}, {h}, {w}]",
            upstream.dims()
        )));
    }
    let plane = h * w;
    let x = input.data();
    let up = upstream.data();
    let wt = weights.data();
    let mut gw = Tensor::zeros(weights.dims());
    let mut gb = Tensor::zeros(&[cout]);
    let mut gi = need_input.then(|| Tensor::zeros(input.dims()));
    for o in 0..cout {
        let up_plane = &up[o * plane..(o + 1) * plane];
        gb.data_mut()[o] = up_plane.iter().sum();
        for c in 0..cin {
            let in_plane = &x[c * plane..(c + 1) * plane];
            for ky in 0..KERNEL {
                let (y0, y1) = valid_range(ky, h);
                for kx in 0..KERNEL {
                    let (x0, x1) = valid_range(kx, w);
                    let widx = ((o * cin + c) * KERNEL + ky) * KERNEL + kx;
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let src_row = (y + ky - 1) * w;
                        let u = &up_plane[y * w + x0..y * w + x1];
                        let s = &in_plane[src_row + x0 + kx - 1..src_row + x1 + kx - 1];
                        for (a, b) in u.iter().zip(s) {
                            acc += a * b;
                        }
                    }
                    gw.data_mut()[widx] = acc;
                    if let Some(gi) = gi.as_mut() {
                        let wv = wt[widx];
                        let gplane = &mut gi.data_mut()[c * plane..(c + 1) * plane];
                        for y in y0..y1 {
                            let src_row = (y + ky - 1) * w;
                            let u = &up_plane[y * w + x0..y * w + x1];
                            let g = &mut gplane[src_row + x0 + kx - 1..src_row + x1 + kx - 1];
                            for (gv, uv) in g.iter_mut().zip(u) {
                                *gv += wv * uv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((gi, gw, gb))
}

/// 2x2 non-overlapping max pooling. Odd trailing rows/columns are dropped.
/// Ties go to the smallest flat index. The returned indices are flat
/// positions into `input`.
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let d = input.dims();
    if d.len() != 3 || d[1] < POOL || d[2] < POOL {
        return Err(Error::Shape(format!(
            "maxpool2 needs CxHxW with H, W >= 2, got {d:?}"
        )));
    }
    let (c, h, w) = (d[0], d[1], d[2]);
    let (oh, ow) = (h / POOL, w / POOL);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    let x = input.data();
    for ch in 0..c {
        for py in 0..oh {
            for px in 0..ow {
                let base = ch * h * w;
                let mut best = base + (2 * py) * w + 2 * px;
                for idx in [
                    base + (2 * py) * w + 2 * px + 1,
                    base + (2 * py + 1) * w + 2 * px,
                    base + (2 * py + 1) * w + 2 * px + 1,
                ] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.data_mut()[(ch * oh + py) * ow + px] = x[best];
                argmax.push(best);
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2_backward(upstream: &Tensor, argmax: &[usize], input_dims: &[usize]) -> Tensor {
    let mut grad = Tensor::zeros(input_dims);
    for (g, &idx) in upstream.data().iter().zip(argmax) {
        grad.data_mut()[idx] += g;
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::relative_error;

    fn reference_conv(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Tensor {
        let (cout, cin, h, w) = (
            weights.dims()[0],
            weights.dims()[1],
            input.dims()[1],
            input.dims()[2],
        );
        let mut out = Tensor::zeros(&[cout, h, w]);
        for o in 0..cout {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias.data()[o];
                    for c in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) =
                                    (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += weights.data()[((o * cin + c) * 3 + ky) * 3 + kx]
                                    * input.at3(c, sy as usize, sx as usize);
                            }
                        }
                    }
                    out.data_mut()[(o * h + y) * w + x] = acc;
                }
            }
        }
        out
    }

    fn random(dims: &[usize], rng: &mut Rng) -> Tensor {
        let n = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| rng.gauss(0.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let mut rng = Rng::new(1);
        let input = random(&[1, 5, 6], &mut rng);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let out = conv2d_forward(&input, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn ones_kernel_on_one_hot() {
        let mut input = Tensor::zeros(&[1, 5, 5]);
        input.data_mut()[2 * 5 + 2] = 1.0;
        let k = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let out = conv2d_forward(&input, &k, &Tensor::zeros(&[1])).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                let inside = (1..=3).contains(&y) && (1..=3).contains(&x);
                assert_eq!(out.at3(0, y, x), if inside { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn matches_loop_reference_bit_exactly() {
        let mut rng = Rng::new(2);
        let input = random(&[3, 7, 5], &mut rng);
        let w = random(&[4, 3, 3, 3], &mut rng);
        let b = random(&[4], &mut rng);
        let fast = conv2d_forward(&input, &w, &b).unwrap();
        let slow = reference_conv(&input, &w, &b);
        assert!(fast
            .data()
            .iter()
            .zip(slow.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let err = conv2d_forward(
            &Tensor::zeros(&[2, 4, 4]),
            &Tensor::zeros(&[1, 3, 3, 3]),
            &Tensor::zeros(&[1]),
        );
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn backward_zero_upstream_and_bias_sum() {
        let mut rng = Rng::new(3);
        let input = random(&[2, 4, 4], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let (gi, gw, gb) = conv2d_backward(&input, &w, &Tensor::zeros(&[3, 4, 4])).unwrap();
        assert!(gi.max_abs() == 0.0 && gw.max_abs() == 0.0 && gb.max_abs() == 0.0);

        let up = random(&[3, 4, 4], &mut rng);
        let (_, _, gb) = conv2d_backward(&input, &w, &up).unwrap();
        for o in 0..3 {
            assert_eq!(gb.data()[o], up.row(o).iter().sum::<f64>());
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(4);
        let input = random(&[1, 4, 4], &mut rng);
        let w = random(&[2, 1, 3, 3], &mut rng);
        let b = random(&[2], &mut rng);
        let up = random(&[2, 4, 4], &mut rng);
        let loss = |i: &Tensor, w: &Tensor, b: &Tensor| -> f64 {
            let o = conv2d_forward(i, w, b).unwrap();
            o.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        let (gi, gw, gb) = conv2d_backward(&input, &w, &up).unwrap();
        let h = 1e-6;
        let fd = |t: &Tensor, k: usize, f: &dyn Fn(&Tensor) -> f64| {
            let mut p = t.clone();
            let mut m = t.clone();
            p.data_mut()[k] += h;
            m.data_mut()[k] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        };
        for k in 0..input.len() {
            let n = fd(&input, k, &|t| loss(t, &w, &b));
            assert!(relative_error(gi.data()[k], n) < 1e-6);
        }
        for k in 0..w.len() {
            let n = fd(&w, k, &|t| loss(&input, t, &b));
            assert!(relative_error(gw.data()[k], n) < 1e-6);
        }
        for k in 0..b.len() {
            let n = fd(&b, k, &|t| loss(&input, &w, t));
            assert!(relative_error(gb.data()[k], n) < 1e-6);
        }
    }

    #[test]
    fn maxpool_basic_and_ties() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, idx) = maxpool2(&x).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(idx, vec![3]);

        let c = Tensor::filled(&[1, 4, 4], 0.7);
        let (out, idx) = maxpool2(&c).unwrap();
        assert_eq!(out.data(), &[0.7; 4]);
        assert_eq!(idx, vec![0, 2, 8, 10]);

        let odd = Tensor::zeros(&[1, 5, 3]);
        assert_eq!(maxpool2(&odd).unwrap().0.dims(), &[1, 2, 1]);
        assert!(maxpool2(&Tensor::zeros(&[1, 1, 4])).is_err());
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let mut rng = Rng::new(5);
        let x = random(&[2, 4, 4], &mut rng);
        let up = random(&[2, 2, 2], &mut rng);
        let (_, idx) = maxpool2(&x).unwrap();
        let g = maxpool2_backward(&up, &idx, x.dims());
        let h = 1e-6;
        for k in 0..x.len() {
            let mut p = x.clone();
            let mut m = x.clone();
            p.data_mut()[k] += h;
            m.data_mut()[k] -= h;
            let f = |t: &Tensor| -> f64 {
                maxpool2(t)
                    .unwrap()
                    .0
                    .data()
                    .iter()
                    .zip(up.data())
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let n = (f(&p) - f(&m)) / (2.0 * h);
            assert!((g.data()[k] - n).abs() < 1e-8);
        }
        assert_eq!(g.data().iter().filter(|v| **v != 0.0).count(), 8);
    }

    #[test]
    fn backbone_shapes_and_zero_image() {
        let mut rng = Rng::new(6);
        let bb = Backbone::new(BackboneConfig::default(), &mut rng).unwrap();
        let fm = bb.forward(&Tensor::zeros(&[1, 64, 64])).unwrap();
        assert_eq!(fm.tensor.dims(), &[32, 8, 8]);
        assert_eq!(fm.downsample, 8);
        assert_eq!(fm.tensor.max_abs(), 0.0);

        let img = random(&[1, 64, 64], &mut rng);
        let a = bb.forward(&img).unwrap();
        let b = bb.forward(&img).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn backbone_rejects_small_images() {
        let mut rng = Rng::new(7);
        let bb = Backbone::new(BackboneConfig::default(), &mut rng).unwrap();
        let err = bb
            .forward(&Tensor::zeros(&[1, 8, 8]))
            .unwrap_err()
            .to_string();
        assert!(err.contains("minimum size is 16"), "{err}");
    }

    #[test]
    fn backbone_gradient_matches_finite_differences() {
        let mut rng = Rng::new(8);
        let cfg = BackboneConfig { blocks: vec![2, 3] };
        let bb = Backbone::new(cfg, &mut rng).unwrap();
        let (img, cache) = loop {
            let img =
                Tensor::from_vec(&[1, 8, 8], (0..64).map(|_| rng.uniform(0.0, 1.0)).collect())
                    .unwrap();
            let (_, cache) = bb.forward_cached(&img).unwrap();
            if cache.kink_margin() > 1e-3 {
                break (img, cache);
            }
        };
        let fm = bb.forward(&img).unwrap();
        let up = random(fm.tensor.dims(), &mut rng);
        let grads = bb.backward(&cache, &up).unwrap();
        let params: Vec<&Param> = bb.params().collect();
        for (pi, p) in params.iter().enumerate() {
            for k in 0..p.value.len() {
                let h = 1e-6 * (1.0 + p.value.data()[k].abs());
                let eval = |delta: f64| {
                    let mut b2 = bb.clone();
                    b2.params_mut().nth(pi).unwrap().value.data_mut()[k] += delta;
                    let fm = b2.forward(&img).unwrap();
                    fm.tensor
                        .data()
                        .iter()
                        .zip(up.data())
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                };
                let n = (eval(h) - eval(-h)) / (2.0 * h);
                let a = grads[pi].data()[k];
                assert!(relative_error(a, n) < 1e-5, "{} [{k}]: {a} vs {n}", p.name);
            }
        }
    }
}
