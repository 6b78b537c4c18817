#![no_main]

use libfuzzer_sys::fuzz_target;
use se2inv::quadrature::parse_design;

// First byte picks the claimed strength; the rest is the table text.
fuzz_target!(|data: &[u8]| {
    let Some((&t, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    if let Ok(d) = parse_design(text, usize::from(t % 16)) {
        assert_eq!(d.points().len(), d.weights().len());
        assert!(d.points().iter().all(|p| (p.norm() - 1.0).abs() < 1e-9));
        let _ = d.validate(d.strength().min(6), 1e-8);
    }
});
