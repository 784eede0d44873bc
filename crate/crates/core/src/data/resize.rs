use crate::numeric::Tensor;

/// Bilinear resize of every plane of a `... x H x W` tensor. Output pixel
/// `(y, x)` samples the input at `((y+0.5)·H_in/H_out − 0.5, (x+0.5)·W_in/W_out − 0.5)`,
/// clamped to the valid range.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let d = image.dims();
    let (h, w) = (d[d.len() - 2], d[d.len() - 1]);
    let planes = image.len() / (h * w);
    let mut dims = d.to_vec();
    let n = dims.len();
    dims[n - 2] = out_h;
    dims[n - 1] = out_w;
    let mut out = Tensor::zeros(&dims);
    let coord = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    for p in 0..planes {
        let src = &image.data()[p * h * w..(p + 1) * h * w];
        for y in 0..out_h {
            let (y0, y1, fy) = coord(y, h, out_h);
            for x in 0..out_w {
                let (x0, x1, fx) = coord(x, w, out_w);
                let lerp = |a: f64, b: f64, f: f64| a + f * (b - a);
                let top = lerp(src[y0 * w + x0], src[y0 * w + x1], fx);
                let bottom = lerp(src[y1 * w + x0], src[y1 * w + x1], fx);
                out.data_mut()[(p * out_h + y) * out_w + x] = lerp(top, bottom, fy);
            }
        }
    }
    out
}

/// Nearest-neighbour resize (used for masks).
pub fn resize_nearest(image: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let d = image.dims();
    let (h, w) = (d[d.len() - 2], d[d.len() - 1]);
    let planes = image.len() / (h * w);
    let mut dims = d.to_vec();
    let n = dims.len();
    dims[n - 2] = out_h;
    dims[n - 1] = out_w;
    let mut out = Tensor::zeros(&dims);
    for p in 0..planes {
        for y in 0..out_h {
            let sy = ((y * h) / out_h).min(h - 1);
            for x in 0..out_w {
                let sx = ((x * w) / out_w).min(w - 1);
                out.data_mut()[(p * out_h + y) * out_w + x] = image.data()[(p * h + sy) * w + sx];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let img = Tensor::from_vec(&[1, 3, 5], (0..15).map(|v| v as f64 * 0.37).collect()).unwrap();
        let r = resize_bilinear(&img, 3, 5);
        for (a, b) in r.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_stays_constant() {
        let img = Tensor::filled(&[1, 7, 3], 0.42);
        let r = resize_bilinear(&img, 12, 9);
        assert!(r.data().iter().all(|&v| v == 0.42));
    }

    #[test]
    fn checkerboard_upsample() {
        let img = Tensor::from_vec(&[1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let r = resize_bilinear(&img, 4, 4);
        // sample coordinates per axis: 0, 0.25, 0.75, 1
        assert!((r.at3(0, 1, 1) - 0.375).abs() < 1e-15);
        assert!((r.at3(0, 1, 2) - 0.625).abs() < 1e-15);
        assert!((r.at3(0, 2, 1) - 0.625).abs() < 1e-15);
        assert!((r.at3(0, 2, 2) - 0.375).abs() < 1e-15);
        assert_eq!(r.at3(0, 0, 0), 0.0);
        assert_eq!(r.at3(0, 0, 3), 1.0);
    }

    #[test]
    fn nearest_keeps_binary_values() {
        let img = Tensor::from_vec(&[1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let r = resize_nearest(&img, 4, 4);
        assert!(r.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(r.at3(0, 0, 2), 1.0);
    }
}
