#![no_main]

use libfuzzer_sys::fuzz_target;
use se2inv::image::ImageGrid;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(img) = ImageGrid::from_csv(text) {
        let again = ImageGrid::from_csv(&img.to_csv()).expect("re-parse own output");
        assert_eq!(img, again);
    }
});
