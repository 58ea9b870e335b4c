#![no_main]

use std::path::PathBuf;
use std::sync::OnceLock;

use contact_hj::config::parse_config_str;
use libfuzzer_sys::fuzz_target;

/// File references resolve against an empty directory, so no input reaches real files.
fn base() -> &'static PathBuf {
    static BASE: OnceLock<PathBuf> = OnceLock::new();
    BASE.get_or_init(|| {
        let dir = std::env::temp_dir().join(format!("contact-hj-fuzz-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    })
}

fuzz_target!(|text: &str| {
    if text.contains('/') || text.contains('\\') || text.contains("..") {
        return;
    }
    if let Ok(cfg) = parse_config_str(text, base()) {
        assert!(cfg.eps > 0.0 && cfg.eps <= 1.0);
        assert!(cfg.grid.len() <= contact_hj::grid::MAX_NODES);
        for f in cfg.initial.iter().chain(&cfg.roster) {
            assert_eq!(f.grid(), &cfg.grid);
        }
    }
});
