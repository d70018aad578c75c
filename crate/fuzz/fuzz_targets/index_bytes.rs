#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // a loaded index must answer queries without panicking
    if let Ok(idx) = rmax::format::load_index(data) {
        let n = idx.config().n_original;
        let _ = idx.query(&rmax::points::QueryRect::full());
        let _ = idx.query(&rmax::points::QueryRect::closed(0, (n / 2) as u32, 0, (n / 2) as u32));
    }
});
