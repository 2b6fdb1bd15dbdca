#![no_main]

use libfuzzer_sys::fuzz_target;
use ufgsde::io::{format_system_file, parse_system_file};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(sys) = parse_system_file(text) else { return };
    assert_eq!(sys.variables.len(), sys.dim());
    assert!(sys.noise_count() >= 1);

    // Export and reimport preserve every field.
    let exported = format_system_file(&sys);
    let back = parse_system_file(&exported).expect("exported system reparses");
    assert_eq!(back.dim(), sys.dim());
    assert_eq!(back.noise_count(), sys.noise_count());
    for (a, b) in sys.fields().iter().zip(back.fields().iter()) {
        assert_eq!(a.to_strings(&sys.variables), b.to_strings(&back.variables));
    }
});
