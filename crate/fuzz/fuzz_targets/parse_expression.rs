#![no_main]

use contact_hj::expr::Expr;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|src: &str| {
    let Ok(e) = Expr::parse(src) else { return };
    assert_eq!(e.source(), src);
    for p in [[0.0, 0.0], [0.25, 0.5], [0.9, 0.1]] {
        let (v, j) = (e.value(p), e.jet(p).value);
        assert!(
            v == j || (v.is_nan() && j.is_nan()) || (v - j).abs() <= 1e-12 * v.abs().max(1.0),
            "{src}: {v} vs {j}"
        );
    }
});
