#![no_main]

use libfuzzer_sys::fuzz_target;
use rmax::influence::{decode_influence, EntropyCode};
use rmax::points::Coord;

fuzz_target!(|data: &[u8]| {
    if let Ok((code, _)) = EntropyCode::from_bytes(data) {
        if code.n() <= 1 << 16 {
            // decode against a plausible coordinate layout; errors are fine
            let diagonal: Vec<(Coord, Coord)> =
                (0..code.n() as Coord).map(|i| (i, i)).collect();
            let _ = decode_influence(&diagonal, &code);
        }
    }
});
