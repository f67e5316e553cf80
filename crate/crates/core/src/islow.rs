//! libjpeg's `jpeg_fdct_islow`: the slow-but-accurate integer forward DCT.
//!
//! Loeffler–Ligtenberg–Moschytz factorisation with 12 multiplies and 32 adds
//! per 1-D pass, 13-bit fixed-point constants and two extra bits of
//! intermediate precision between passes. Output is the true DCT scaled up
//! by 8.

const CONST_BITS: u32 = 13;
const PASS1_BITS: u32 = 2;

const FIX_0_298631336: i64 = 2446;
const FIX_0_390180644: i64 = 3196;
const FIX_0_541196100: i64 = 4433;
const FIX_0_765366865: i64 = 6270;
const FIX_0_899976223: i64 = 7373;
const FIX_1_175875602: i64 = 9633;
const FIX_1_501321110: i64 = 12299;
const FIX_1_847759065: i64 = 15137;
const FIX_1_961570560: i64 = 16069;
const FIX_2_053119869: i64 = 16819;
const FIX_2_562915447: i64 = 20995;
const FIX_3_072711026: i64 = 25172;

/// Right shift with rounding (arithmetic shift, rounds half up).
#[inline(always)]
fn descale(x: i64, n: u32) -> i32 {
    ((x + (1 << (n - 1))) >> n) as i32
}

#[inline(always)]
fn pass(data: &mut [i32; 64], base: usize, stride: usize, first: bool) {
    let at = |k: usize| base + k * stride;
    let d = |k: usize| i64::from(data[at(k)]);

    let tmp0 = d(0) + d(7);
    let tmp7 = d(0) - d(7);
    let tmp1 = d(1) + d(6);
    let tmp6 = d(1) - d(6);
    let tmp2 = d(2) + d(5);
    let tmp5 = d(2) - d(5);
    let tmp3 = d(3) + d(4);
    let tmp4 = d(3) - d(4);

    // Even part. The published figure has a faulty rotator: sqrt(2)*c1
    // should read sqrt(2)*c6.
    let tmp10 = tmp0 + tmp3;
    let tmp13 = tmp0 - tmp3;
    let tmp11 = tmp1 + tmp2;
    let tmp12 = tmp1 - tmp2;

    let (shift_even, shift_odd) = if first {
        (None, CONST_BITS - PASS1_BITS)
    } else {
        (Some(PASS1_BITS), CONST_BITS + PASS1_BITS)
    };

    match shift_even {
        None => {
            data[at(0)] = ((tmp10 + tmp11) << PASS1_BITS) as i32;
            data[at(4)] = ((tmp10 - tmp11) << PASS1_BITS) as i32;
        }
        Some(n) => {
            data[at(0)] = descale(tmp10 + tmp11, n);
            data[at(4)] = descale(tmp10 - tmp11, n);
        }
    }

    let z1 = (tmp12 + tmp13) * FIX_0_541196100;
    data[at(2)] = descale(z1 + tmp13 * FIX_0_765366865, shift_odd);
    data[at(6)] = descale(z1 - tmp12 * FIX_1_847759065, shift_odd);

    // Odd part; cK stands for cos(K*pi/16).
    let z1 = tmp4 + tmp7;
    let z2 = tmp5 + tmp6;
    let z3 = tmp4 + tmp6;
    let z4 = tmp5 + tmp7;
    let z5 = (z3 + z4) * FIX_1_175875602; // sqrt(2) * c3

    let tmp4 = tmp4 * FIX_0_298631336; // sqrt(2) * (-c1+c3+c5-c7)
    let tmp5 = tmp5 * FIX_2_053119869; // sqrt(2) * ( c1+c3-c5+c7)
    let tmp6 = tmp6 * FIX_3_072711026; // sqrt(2) * ( c1+c3+c5-c7)
    let tmp7 = tmp7 * FIX_1_501321110; // sqrt(2) * ( c1+c3-c5-c7)
    let z1 = -z1 * FIX_0_899976223; // sqrt(2) * (c7-c3)
    let z2 = -z2 * FIX_2_562915447; // sqrt(2) * (-c1-c3)
    let z3 = -z3 * FIX_1_961570560 + z5; // sqrt(2) * (-c3-c5)
    let z4 = -z4 * FIX_0_390180644 + z5; // sqrt(2) * (c5-c3)

    data[at(7)] = descale(tmp4 + z1 + z3, shift_odd);
    data[at(5)] = descale(tmp5 + z2 + z4, shift_odd);
    data[at(3)] = descale(tmp6 + z2 + z3, shift_odd);
    data[at(1)] = descale(tmp7 + z1 + z4, shift_odd);
}

/// In-place forward transform of one 8×8 block of (level-shifted) samples.
pub fn fdct_islow(data: &mut [i32; 64]) {
    for row in 0..8 {
        pass(data, row * 8, 1, true);
    }
    for col in 0..8 {
        pass(data, col, 8, false);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_block_has_only_dc() {
        let mut data = [1i32; 64];
        fdct_islow(&mut data);
        assert_eq!(data[0], 64);
        assert!(data[1..].iter().all(|&v| v == 0));
    }

    #[test]
    fn close_to_scaled_float_dct() {
        let basis = crate::dct::DctBasis::get(crate::block::Dims::STANDARD);
        let mut data = [0i32; 64];
        for (i, v) in data.iter_mut().enumerate() {
            *v = ((i * 53 + 7) % 256) as i32 - 128;
        }
        let float = basis.forward(&data.map(f64::from));
        fdct_islow(&mut data);
        for k in 0..64 {
            assert!((f64::from(data[k]) / 8.0 - float[k]).abs() < 1.0, "coef {k}");
        }
    }
}
