#![no_main]

use contact_hj::GridFunction;
use libfuzzer_sys::fuzz_target;

// Anything accepted must survive a write/read round trip bit for bit.
fuzz_target!(|text: &str| {
    let Ok(f) = GridFunction::read_csv_str(text) else {
        return;
    };
    let again = GridFunction::read_csv_str(&f.to_csv_string("value")).expect("round trip parses");
    assert_eq!(f.grid(), again.grid());
    for (a, b) in f.values().iter().zip(again.values()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
});
