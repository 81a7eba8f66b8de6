//! Branch-light `sin_cos` for the integration hot loop.
//!
//! Three-part Cody–Waite reduction to `[−π/4, π/4]` followed by the fdlibm
//! minimax kernels. Arguments beyond `FAST_LIMIT` or non-finite ones fall
//! back to the standard library.

// constants are quoted at the precision of their published source
#![allow(clippy::excessive_precision)]

const FAST_LIMIT: f64 = 1e5;
const TWO_OVER_PI: f64 = std::f64::consts::FRAC_2_PI;
const PIO2_1: f64 = 1.570_796_326_734_125_614_17e0;
const PIO2_2: f64 = 6.077_100_506_303_965_976_60e-11;
const PIO2_3: f64 = 2.022_266_248_711_166_455_80e-21;

const S1: f64 = -1.666_666_666_666_663_243_48e-01;
const S2: f64 = 8.333_333_333_322_489_461_24e-03;
const S3: f64 = -1.984_126_982_985_794_931_34e-04;
const S4: f64 = 2.755_731_370_707_006_767_89e-06;
const S5: f64 = -2.505_076_025_340_686_341_95e-08;
const S6: f64 = 1.589_690_995_211_550_102_21e-10;

const C1: f64 = 4.166_666_666_666_660_190_37e-02;
const C2: f64 = -1.388_888_888_887_410_957_49e-03;
const C3: f64 = 2.480_158_728_947_672_941_78e-05;
const C4: f64 = -2.755_731_435_139_066_330_35e-07;
const C5: f64 = 2.087_572_321_298_174_827_90e-09;
const C6: f64 = -1.135_964_755_778_819_482_65e-11;

#[inline(always)]
fn kernel(x: f64) -> (f64, f64) {
    // round-to-nearest through the 1.5·2^52 shifter; the low bits of the
    // shifted value hold the quadrant
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let shifted = x * TWO_OVER_PI + SHIFTER;
    let q = shifted.to_bits();
    let k = shifted - SHIFTER;
    let r = ((x - k * PIO2_1) - k * PIO2_2) - k * PIO2_3;
    let z = r * r;
    let s = r + r * z * (S1 + z * (S2 + z * (S3 + z * (S4 + z * (S5 + z * S6)))));
    let hz = 0.5 * z;
    let w = 1.0 - hz;
    let c = w + (((1.0 - w) - hz) + z * z * (C1 + z * (C2 + z * (C3 + z * (C4 + z * (C5 + z * C6))))));
    let swap = q & 1 == 1;
    let (sv, cv) = if swap { (c, s) } else { (s, c) };
    let sin_neg = q & 2 == 2;
    let cos_neg = (q.wrapping_add(1)) & 2 == 2;
    (
        f64::from_bits(sv.to_bits() ^ ((sin_neg as u64) << 63)),
        f64::from_bits(cv.to_bits() ^ ((cos_neg as u64) << 63)),
    )
}

#[inline]
pub(crate) fn sin_cos(x: f64) -> (f64, f64) {
    if x.abs() < FAST_LIMIT {
        kernel(x)
    } else {
        x.sin_cos()
    }
}

/// Element-wise `sin_cos` over equal-length slices.
pub(crate) fn sin_cos_slice(x: &[f64], s: &mut [f64], c: &mut [f64]) {
    assert!(x.len() == s.len() && x.len() == c.len());
    if x.iter().all(|v| v.abs() < FAST_LIMIT) {
        for ((v, s), c) in x.iter().zip(s.iter_mut()).zip(c.iter_mut()) {
            let (a, b) = kernel(*v);
            *s = a;
            *c = b;
        }
    } else {
        for ((v, s), c) in x.iter().zip(s.iter_mut()).zip(c.iter_mut()) {
            let (a, b) = sin_cos(*v);
            *s = a;
            *c = b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn agrees_with_std() {
        let mut worst = 0.0f64;
        let mut x = -2000.0;
        while x < 2000.0 {
            let (s, c) = sin_cos(x);
            worst = worst.max((s - x.sin()).abs()).max((c - x.cos()).abs());
            x += 0.000_731;
        }
        assert!(worst < 4e-16, "{worst}");
        for x in [0.0, -0.0, 1e-300, std::f64::consts::FRAC_PI_4, 3.0e4, -99_999.9] {
            let (s, c) = sin_cos(x);
            assert!((s - x.sin()).abs() < 1e-15 && (c - x.cos()).abs() < 1e-15, "{x}");
        }
        let (s, c) = sin_cos(1e7);
        assert_eq!((s, c), 1e7f64.sin_cos());
        assert!(sin_cos(f64::NAN).0.is_nan());
        let xs = [0.3, -7.0, 2e5, f64::INFINITY];
        let (mut s, mut c) = ([0.0; 4], [0.0; 4]);
        sin_cos_slice(&xs, &mut s, &mut c);
        assert_eq!(s[2], 2e5f64.sin());
        assert!((s[1] - (-7.0f64).sin()).abs() < 1e-15 && c[3].is_nan());
    }
}
