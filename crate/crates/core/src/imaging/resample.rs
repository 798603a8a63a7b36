use super::ImageTensor;

/// Largest centered square crop.
pub fn center_crop(img: &ImageTensor) -> ImageTensor {
    let side = img.height.min(img.width);
    let r0 = (img.height - side) / 2;
    let c0 = (img.width - side) / 2;
    if side == img.height && side == img.width {
        return img.clone();
    }
    ImageTensor::from_fn(side, side, |r, c| img.pixel(r0 + r, c0 + c))
}

/// Per-output-sample `(input index, weight)` lists of an area-averaging
/// filter that maps `from` samples onto `to <= from` samples.
fn box_weights(from: usize, to: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = from as f64 / to as f64;
    (0..to)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let mut taps = Vec::new();
            let mut j = lo.floor() as usize;
            while (j as f64) < hi && j < from {
                let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((j, overlap / scale));
                }
                j += 1;
            }
            taps
        })
        .collect()
}

/// Area-averaging downsample of a square image to `size x size`.
pub fn box_downsample(img: &ImageTensor, size: usize) -> ImageTensor {
    assert!(size >= 1 && size <= img.height && size <= img.width);
    let rows = box_weights(img.height, size);
    let cols = box_weights(img.width, size);
    ImageTensor::from_fn(size, size, |r, c| {
        let mut acc = [0.0; 3];
        for &(ri, wr) in &rows[r] {
            for &(ci, wc) in &cols[c] {
                let p = img.pixel(ri, ci);
                for k in 0..3 {
                    acc[k] += wr * wc * p[k];
                }
            }
        }
        acc
    })
}

fn bilinear_upsample(img: &ImageTensor, size: usize) -> ImageTensor {
    let src = |i: usize, n: usize| -> (usize, usize, f64) {
        let x = ((i as f64 + 0.5) * n as f64 / size as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let x0 = x.floor() as usize;
        let x1 = (x0 + 1).min(n - 1);
        (x0, x1, x - x0 as f64)
    };
    ImageTensor::from_fn(size, size, |r, c| {
        let (r0, r1, fr) = src(r, img.height);
        let (c0, c1, fc) = src(c, img.width);
        let (a, b, cc, d) = (img.pixel(r0, c0), img.pixel(r0, c1), img.pixel(r1, c0), img.pixel(r1, c1));
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = a[k] * (1.0 - fc) + b[k] * fc;
            let bottom = cc[k] * (1.0 - fc) + d[k] * fc;
            out[k] = top * (1.0 - fr) + bottom * fr;
        }
        out
    })
}

/// Crops the largest centered square, then box-filters down (or bilinearly
/// upsamples) to `size x size`.
pub fn center_crop_resize(img: &ImageTensor, size: usize) -> ImageTensor {
    assert!(size >= 1, "size must be >= 1");
    let sq = center_crop(img);
    match size.cmp(&sq.height) {
        std::cmp::Ordering::Equal => sq,
        std::cmp::Ordering::Less => box_downsample(&sq, size),
        std::cmp::Ordering::Greater => bilinear_upsample(&sq, size),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, |r, c| {
            let v = (r * w + c) as f64 / (h * w) as f64;
            [v, 1.0 - v, 0.5 * v]
        })
    }

    #[test]
    fn identity_at_same_size() {
        let img = ramp(5, 5);
        assert_eq!(center_crop_resize(&img, 5), img);
    }

    #[test]
    fn two_by_two_blocks_are_averaged() {
        let img = ramp(4, 4);
        let out = center_crop_resize(&img, 2);
        for r in 0..2 {
            for c in 0..2 {
                let mut want = [0.0; 3];
                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let p = img.pixel(2 * r + dr, 2 * c + dc);
                    for k in 0..3 {
                        want[k] += p[k] / 4.0;
                    }
                }
                let got = out.pixel(r, c);
                for k in 0..3 {
                    assert!((got[k] - want[k]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn wide_image_crops_center_columns() {
        let img = ramp(4, 6);
        let out = center_crop(&img);
        assert_eq!((out.height, out.width), (4, 4));
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(out.pixel(r, c), img.pixel(r, c + 1));
            }
        }
    }

    #[test]
    fn upsampling_keeps_constant_images() {
        let img = ImageTensor::from_fn(3, 3, |_, _| [0.25, 0.5, 0.75]);
        let up = center_crop_resize(&img, 7);
        assert!(up.pixels.chunks(3).all(|p| (p[0] - 0.25).abs() < 1e-15 && (p[2] - 0.75).abs() < 1e-15));
    }

    proptest! {
        #[test]
        fn box_downsample_preserves_mean(side in 2usize..20, frac in 0.05f64..1.0, seed in 0u64..1000) {
            let size = ((side as f64 * frac).ceil() as usize).clamp(1, side);
            let img = ImageTensor::from_fn(side, side, |r, c| {
                let x = crate::rng::splitmix(seed ^ (r * 31 + c) as u64);
                let v = (x >> 11) as f64 / (1u64 << 53) as f64;
                [v, v * 0.5, 1.0 - v]
            });
            let out = box_downsample(&img, size);
            let a = img.channel_means();
            let b = out.channel_means();
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }
}
