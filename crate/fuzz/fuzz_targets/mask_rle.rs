#![no_main]

use filterscope::mask::PixelMask;
use libfuzzer_sys::fuzz_target;

// First two bytes are width and height, the rest little-endian u32 runs.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let (w, h) = (data[0] as usize, data[1] as usize);
    let runs: Vec<u32> = data[2..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Ok(mask) = PixelMask::from_rle(w, h, &runs) {
        assert_eq!(PixelMask::from_rle(w, h, &mask.to_rle()).unwrap(), mask);
    }
});
