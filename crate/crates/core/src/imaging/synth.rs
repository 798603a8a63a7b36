//! Procedural test images.
//!
//! [`dead_leaves`] renders occluding textured disks with a power-law radius
//! distribution, which reproduces the roughly `1/f` spectrum and sharp edges of
//! natural photographs. The per-seed scene parameters span a wide range of
//! complexity so that a corpus of these images yields a spread of encoding
//! difficulty.

use crate::rng::{self, Prng};

use super::ImageTensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneParams {
    pub leaves: usize,
    /// Radius bounds as fractions of the image side.
    pub min_radius: f64,
    pub max_radius: f64,
    /// Amplitude of the stripe texture inside each leaf.
    pub texture: f64,
    /// Highest texture frequency in cycles per image side.
    pub max_texture_cycles: f64,
}

impl SceneParams {
    /// Scene parameters derived from `seed`, spanning easy to hard images.
    pub fn from_seed(seed: u64) -> Self {
        let mut r = rng::stream(seed, 0x5CE7E);
        SceneParams {
            leaves: rng::int_inclusive(&mut r, 20, 400),
            min_radius: rng::log_uniform(&mut r, 0.01, 0.12),
            max_radius: rng::uniform(&mut r, 0.25, 0.6),
            texture: rng::uniform(&mut r, 0.0, 0.2),
            max_texture_cycles: rng::uniform(&mut r, 2.0, 12.0),
        }
    }
}

struct Leaf {
    cx: f64,
    cy: f64,
    r2: f64,
    color: [f64; 3],
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

fn draw_radius(r: &mut Prng, lo: f64, hi: f64) -> f64 {
    // Inverse CDF of p(r) ∝ r^-3 on [lo, hi].
    let u = rng::unit(r);
    let a = lo.powi(-2);
    let b = hi.powi(-2);
    (a - u * (a - b)).powf(-0.5)
}

pub fn dead_leaves_with(size: usize, seed: u64, p: &SceneParams) -> ImageTensor {
    let mut r = rng::stream(seed, 0x1EAF);
    let base: [f64; 3] = [rng::unit(&mut r), rng::unit(&mut r), rng::unit(&mut r)];
    let grad: [f64; 3] = [0; 3].map(|_| rng::uniform(&mut r, -0.3, 0.3));
    let palette_tint: [f64; 3] = [0; 3].map(|_| rng::uniform(&mut r, 0.6, 1.0));
    let leaves: Vec<Leaf> = (0..p.leaves)
        .map(|_| {
            let radius = draw_radius(&mut r, p.min_radius, p.max_radius);
            let theta = rng::uniform(&mut r, 0.0, std::f64::consts::TAU);
            let cycles = rng::uniform(&mut r, 1.0, p.max_texture_cycles);
            let k = std::f64::consts::TAU * cycles;
            Leaf {
                cx: rng::uniform(&mut r, -0.2, 1.2),
                cy: rng::uniform(&mut r, -0.2, 1.2),
                r2: radius * radius,
                color: [0; 3].map(|i| rng::unit(&mut r) * palette_tint[i]),
                kx: k * theta.cos(),
                ky: k * theta.sin(),
                phase: rng::uniform(&mut r, 0.0, std::f64::consts::TAU),
                amp: p.texture * rng::unit(&mut r),
            }
        })
        .collect();

    // 2x2 supersampling; later leaves occlude earlier ones.
    let sub = [0.25, 0.75];
    ImageTensor::from_fn(size, size, |row, col| {
        let mut acc = [0.0; 3];
        for dy in sub {
            for dx in sub {
                let x = (col as f64 + dx) / size as f64;
                let y = (row as f64 + dy) / size as f64;
                let mut px = [0; 3].map(|i| base[i] + grad[i] * (x - y));
                for leaf in leaves.iter().rev() {
                    let (ex, ey) = (x - leaf.cx, y - leaf.cy);
                    if ex * ex + ey * ey <= leaf.r2 {
                        let t = leaf.amp * (leaf.kx * x + leaf.ky * y + leaf.phase).sin();
                        px = leaf.color.map(|c| c + t);
                        break;
                    }
                }
                for k in 0..3 {
                    acc[k] += px[k].clamp(0.0, 1.0) / 4.0;
                }
            }
        }
        acc
    })
}

/// A natural-image stand-in of side `size`, fully determined by `seed`.
pub fn dead_leaves(size: usize, seed: u64) -> ImageTensor {
    dead_leaves_with(size, seed, &SceneParams::from_seed(seed))
}

/// i.i.d. uniform noise in every channel.
pub fn white_noise(size: usize, seed: u64) -> ImageTensor {
    let mut r = rng::stream(seed, 0x401);
    let mut pixels = Vec::with_capacity(size * size * 3);
    for _ in 0..size * size * 3 {
        pixels.push(rng::unit(&mut r));
    }
    ImageTensor::new(size, size, pixels).expect("unit draws are in range")
}

pub fn constant(size: usize, color: [f64; 3]) -> ImageTensor {
    ImageTensor::from_fn(size, size, |_, _| color)
}

/// `count` photo-like images of side `size`, seeds `base_seed..`.
pub fn corpus(count: usize, size: usize, base_seed: u64) -> Vec<ImageTensor> {
    (0..count as u64).map(|i| dead_leaves(size, base_seed + i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_dependent() {
        assert_eq!(dead_leaves(16, 3), dead_leaves(16, 3));
        assert_ne!(dead_leaves(16, 3).id, dead_leaves(16, 4).id);
    }

    #[test]
    fn scenes_are_not_flat() {
        for seed in 0..8 {
            let img = dead_leaves(24, seed);
            let psnr = super::super::mean_color_psnr(&img);
            assert!(psnr.is_finite() && psnr < 40.0, "seed {seed}: {psnr}");
        }
    }
}
