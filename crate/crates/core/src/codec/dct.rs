//! Orthonormal 8x8 DCT-II and zig-zag scan order.

use std::sync::OnceLock;

pub const B: usize = 8;

fn basis() -> &'static [[f64; B]; B] {
    static C: OnceLock<[[f64; B]; B]> = OnceLock::new();
    C.get_or_init(|| {
        let mut c = [[0.0; B]; B];
        for (k, row) in c.iter_mut().enumerate() {
            let a = if k == 0 { (1.0 / B as f64).sqrt() } else { (2.0 / B as f64).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = a * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2 * B) as f64).cos();
            }
        }
        c
    })
}

/// `C X C^T` for a row-major 8x8 block.
pub fn forward(x: &[f64; 64]) -> [f64; 64] {
    let c = basis();
    let mut tmp = [0.0; 64];
    for i in 0..B {
        for k in 0..B {
            tmp[i * B + k] = (0..B).map(|n| c[k][n] * x[i * B + n]).sum();
        }
    }
    let mut out = [0.0; 64];
    for k in 0..B {
        for j in 0..B {
            out[k * B + j] = (0..B).map(|i| c[k][i] * tmp[i * B + j]).sum();
        }
    }
    out
}

/// `C^T Y C`.
pub fn inverse(y: &[f64; 64]) -> [f64; 64] {
    let c = basis();
    let mut tmp = [0.0; 64];
    for i in 0..B {
        for n in 0..B {
            tmp[i * B + n] = (0..B).map(|k| c[k][n] * y[i * B + k]).sum();
        }
    }
    let mut out = [0.0; 64];
    for m in 0..B {
        for n in 0..B {
            out[m * B + n] = (0..B).map(|i| c[i][m] * tmp[i * B + n]).sum();
        }
    }
    out
}

/// Block positions in zig-zag order, lowest frequency first.
pub fn zigzag() -> &'static [usize; 64] {
    static Z: OnceLock<[usize; 64]> = OnceLock::new();
    Z.get_or_init(|| {
        let mut order = [0; 64];
        let mut i = 0;
        for s in 0..(2 * B - 1) {
            let cells: Vec<(usize, usize)> = (0..B)
                .filter_map(|r| s.checked_sub(r).filter(|&c| c < B).map(|c| (r, c)))
                .collect();
            let iter: Box<dyn Iterator<Item = &(usize, usize)>> =
                if s % 2 == 0 { Box::new(cells.iter().rev()) } else { Box::new(cells.iter()) };
            for &(r, c) in iter {
                order[i] = r * B + c;
                i += 1;
            }
        }
        order
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_energy() {
        let mut x = [0.0; 64];
        for (i, v) in x.iter_mut().enumerate() {
            *v = ((i * 37) % 11) as f64 - 5.0;
        }
        let y = forward(&x);
        let back = inverse(&y);
        for i in 0..64 {
            assert!((back[i] - x[i]).abs() < 1e-12);
        }
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let ey: f64 = y.iter().map(|v| v * v).sum();
        assert!((ex - ey).abs() < 1e-9);
    }

    #[test]
    fn constant_block_is_dc_only() {
        let y = forward(&[3.0; 64]);
        assert!((y[0] - 24.0).abs() < 1e-12);
        assert!(y[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zigzag_prefix() {
        assert_eq!(&zigzag()[..6], &[0, 1, 8, 16, 9, 2]);
        let mut seen = zigzag().to_vec();
        seen.sort();
        assert_eq!(seen, (0..64).collect::<Vec<_>>());
    }
}
