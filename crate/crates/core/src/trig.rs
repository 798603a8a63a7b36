//! Fast `sin_cos` for the activation hot loop.
//!
//! Arguments are reduced by multiples of pi/2 with a three-part constant, then
//! evaluated with the Cephes minimax polynomials on `[-pi/4, pi/4]`. The result
//! is within a few ulps of the libm value for `|x| <= 2^20`; larger arguments
//! fall back to `f64::sin_cos`.

const FRAC_2_PI: f64 = std::f64::consts::FRAC_2_PI;
const PIO2_1: f64 = 1.570_796_326_734_125_614_17;
const PIO2_2: f64 = 6.077_100_506_303_965_976_6e-11;
const PIO2_3: f64 = 2.022_266_248_795_950_631_54e-21;
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;
const REDUCE_LIMIT: f64 = 1_048_576.0;

const SIN: [f64; 6] = [
    1.589_623_015_765_465_680_60e-10,
    -2.505_074_776_285_780_728_66e-8,
    2.755_731_362_138_572_452_13e-6,
    -1.984_126_982_958_953_859_96e-4,
    8.333_333_333_322_118_588_78e-3,
    -1.666_666_666_666_663_072_95e-1,
];

const COS: [f64; 6] = [
    -1.135_853_652_138_768_173_00e-11,
    2.087_570_084_197_473_167_78e-9,
    -2.755_731_417_929_673_881_12e-7,
    2.480_158_728_885_170_453_48e-5,
    -1.388_888_888_887_305_641_16e-3,
    4.166_666_666_666_659_292_18e-2,
];

#[inline(always)]
fn poly(c: &[f64; 6], z: f64) -> f64 {
    ((((c[0] * z + c[1]) * z + c[2]) * z + c[3]) * z + c[4]) * z + c[5]
}

#[inline(always)]
fn reduced(x: f64) -> (f64, f64) {
    // Adding 1.5 * 2^52 rounds to an integer held in the low mantissa bits.
    let shifted = x * FRAC_2_PI + ROUND_MAGIC;
    let qi = shifted.to_bits();
    let q = shifted - ROUND_MAGIC;
    let r = ((x - q * PIO2_1) - q * PIO2_2) - q * PIO2_3;
    let z = r * r;
    let s = r + r * z * poly(&SIN, z);
    let c = 1.0 - 0.5 * z + z * z * poly(&COS, z);
    let keep = (qi & 1).wrapping_sub(1);
    let (sb, cb) = (s.to_bits(), c.to_bits());
    let a = (sb & keep) | (cb & !keep);
    let b = (cb & keep) | (sb & !keep);
    let sin_sign = (qi & 2) << 62;
    let cos_sign = (qi.wrapping_add(1) & 2) << 62;
    (f64::from_bits(a ^ sin_sign), f64::from_bits(b ^ cos_sign))
}

#[inline]
pub fn sin_cos(x: f64) -> (f64, f64) {
    if x.abs() <= REDUCE_LIMIT {
        reduced(x)
    } else {
        x.sin_cos()
    }
}

#[inline(always)]
fn reduce_all(z: &mut [f64], cos: &mut [f64]) {
    for (v, c) in z.iter_mut().zip(cos.iter_mut()) {
        (*v, *c) = reduced(*v);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn reduce_all_avx2(z: &mut [f64], cos: &mut [f64]) {
    reduce_all(z, cos)
}

/// Replaces each `z` with `sin(z)` and writes `cos(z)` to the same index of `cos`.
pub fn sin_cos_in_place(z: &mut [f64], cos: &mut [f64]) {
    assert_eq!(z.len(), cos.len());
    if !z.iter().all(|v| v.abs() <= REDUCE_LIMIT) {
        for (v, c) in z.iter_mut().zip(cos.iter_mut()) {
            (*v, *c) = sin_cos(*v);
        }
        return;
    }
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        unsafe { reduce_all_avx2(z, cos) };
        return;
    }
    reduce_all(z, cos)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agrees_with_libm() {
        let mut worst: f64 = 0.0;
        let mut x = -200.0;
        while x < 200.0 {
            let (s, c) = sin_cos(x);
            worst = worst.max((s - x.sin()).abs()).max((c - x.cos()).abs());
            x += 0.000_731;
        }
        assert!(worst < 1e-15, "{worst}");
    }

    #[test]
    fn special_points() {
        assert_eq!(sin_cos(0.0), (0.0, 1.0));
        let (s, c) = sin_cos(std::f64::consts::FRAC_PI_2);
        assert!((s - 1.0).abs() < 1e-16 && c.abs() < 1e-16);
        let (s, _) = sin_cos(1e9);
        assert_eq!(s, 1e9f64.sin());
        assert!(sin_cos(f64::NAN).0.is_nan());
        assert!(sin_cos(f64::INFINITY).0.is_nan());
    }

    #[test]
    fn slice_form_matches_scalar() {
        let mut z = vec![0.3, -7.0, 1e8, f64::NAN, 2.5];
        let want: Vec<(f64, f64)> = z.iter().map(|&x| sin_cos(x)).collect();
        let mut c = vec![0.0; z.len()];
        sin_cos_in_place(&mut z, &mut c);
        for (i, (s, k)) in want.iter().enumerate() {
            assert!(s.to_bits() == z[i].to_bits() || (s.is_nan() && z[i].is_nan()));
            assert!(k.to_bits() == c[i].to_bits() || (k.is_nan() && c[i].is_nan()));
        }
    }
}
