//! Feeds raw bytes to the cache-entry decoder. The decoder must reject
//! anything malformed with an error, never panic or over-allocate.
//!
//! Two keys are tried per input: a fixed small one, and one derived
//! from whatever the input's own header claims, so the payload checks
//! behind the header-agreement gate also get exercised.

#![no_main]

use libfuzzer_sys::fuzz_target;

use lcdsym::cache::{decode_bytes, CacheKey};

fuzz_target!(|data: &[u8]| {
    let fixed = CacheKey::new(2, 5).unwrap();
    check(&fixed, data);

    if data.len() >= 24 {
        let dim = u32::from_le_bytes(data[12..16].try_into().unwrap()) as usize;
        let half = u32::from_le_bytes(data[16..20].try_into().unwrap()) as usize;
        let total = 2usize.saturating_mul(half).saturating_add((data[20] == 1) as usize);
        if let Ok(claimed) = CacheKey::new(dim, total) {
            check(&claimed, data);
        }
    }
});

fn check(key: &CacheKey, data: &[u8]) {
    if let Ok(set) = decode_bytes(key, data) {
        assert_eq!(set.dim(), key.dim);
        assert_eq!(set.total_samples(), key.total_samples);
        assert!(set.half_positions().iter().all(|v| v.is_finite()));
    }
}
