#![no_main]

use libfuzzer_sys::fuzz_target;
use ridgeless::experiments::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ExperimentConfig::from_json_str(text) {
        // an accepted config must expand its grids without panicking
        let _ = cfg.sample_sizes();
        let _ = cfg.dims();
    }
});
