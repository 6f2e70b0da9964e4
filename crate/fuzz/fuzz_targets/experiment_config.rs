#![no_main]

use igm_lab::config::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ExperimentConfig::from_json(text) {
        let _ = cfg.validate();
        let _ = cfg.iterations();
        let _ = cfg.seeds.expand();
        assert_eq!(cfg.digest().len(), 64);
    }
});
