//! SHA-1 block compression with the x86 SHA extension.

use core::arch::x86_64::*;

pub(super) fn available() -> bool {
    #[cfg(any(feature = "std", test))]
    {
        std::is_x86_feature_detected!("sha")
            && std::is_x86_feature_detected!("sse2")
            && std::is_x86_feature_detected!("ssse3")
            && std::is_x86_feature_detected!("sse4.1")
    }
    #[cfg(not(any(feature = "std", test)))]
    {
        cfg!(all(
            target_feature = "sha",
            target_feature = "sse2",
            target_feature = "ssse3",
            target_feature = "sse4.1"
        ))
    }
}

/// # Safety
/// The CPU must support `sha`, `sse2`, `ssse3` and `sse4.1`.
#[target_feature(enable = "sha,sse2,ssse3,sse4.1")]
pub(super) unsafe fn compress(state: &mut [u32; 5], block: &[u8; 64]) {
    // Reverses all 16 bytes so each lane holds a big-endian word and W0
    // sits in the most significant lane.
    let byte_swap = _mm_set_epi64x(0x0001_0203_0405_0607, 0x0809_0a0b_0c0d_0e0f);
    let ptr = block.as_ptr() as *const __m128i;

    let mut w = [_mm_setzero_si128(); 20];
    for (i, slot) in w.iter_mut().take(4).enumerate() {
        *slot = _mm_shuffle_epi8(_mm_loadu_si128(ptr.add(i)), byte_swap);
    }
    for i in 4..20 {
        w[i] = _mm_sha1msg2_epu32(
            _mm_xor_si128(_mm_sha1msg1_epu32(w[i - 4], w[i - 3]), w[i - 2]),
            w[i - 1],
        );
    }

    let abcd_save = _mm_set_epi32(state[0] as i32, state[1] as i32, state[2] as i32, state[3] as i32);
    let e_save = _mm_set_epi32(state[4] as i32, 0, 0, 0);

    // E for group g is rol30(A) at the start of group g - 1; sha1nexte
    // folds that into the top lane of the schedule words.
    let mut prev = abcd_save;
    let mut abcd = _mm_sha1rnds4_epu32(abcd_save, _mm_add_epi32(e_save, w[0]), 0);
    macro_rules! group {
        ($g:expr, $func:expr) => {{
            let e_w = _mm_sha1nexte_epu32(prev, w[$g]);
            prev = abcd;
            abcd = _mm_sha1rnds4_epu32(abcd, e_w, $func);
        }};
    }
    group!(1, 0);
    group!(2, 0);
    group!(3, 0);
    group!(4, 0);
    group!(5, 1);
    group!(6, 1);
    group!(7, 1);
    group!(8, 1);
    group!(9, 1);
    group!(10, 2);
    group!(11, 2);
    group!(12, 2);
    group!(13, 2);
    group!(14, 2);
    group!(15, 3);
    group!(16, 3);
    group!(17, 3);
    group!(18, 3);
    group!(19, 3);

    let e = _mm_sha1nexte_epu32(prev, e_save);
    let abcd = _mm_add_epi32(abcd, abcd_save);

    state[0] = _mm_extract_epi32(abcd, 3) as u32;
    state[1] = _mm_extract_epi32(abcd, 2) as u32;
    state[2] = _mm_extract_epi32(abcd, 1) as u32;
    state[3] = _mm_extract_epi32(abcd, 0) as u32;
    state[4] = _mm_extract_epi32(e, 3) as u32;
}
