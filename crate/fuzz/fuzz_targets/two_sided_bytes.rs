#![no_main]

use libfuzzer_sys::fuzz_target;
use rmax::two_sided::TwoSidedIndex;

fuzz_target!(|data: &[u8]| {
    let _ = TwoSidedIndex::from_bytes(data);
});
