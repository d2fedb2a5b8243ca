#![no_main]

use libfuzzer_sys::fuzz_target;
use ridgeless::experiments::plot::{parse_descent_csv, render_svg};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = parse_descent_csv(data) {
        if let Some(n) = records.first().map(|r| r.n) {
            let _ = render_svg(&records, n, 3);
        }
    }
});
