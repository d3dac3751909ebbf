//! Experiment harness around `mfclab-core`: configuration-driven runs,
//! deterministic CSV/JSON/SVG artifacts, and built-in suites.

pub mod experiments;
pub mod plot;
pub mod report;

/// Honor `MFCLAB_THREADS` as a cap on worker parallelism.  Must run before
/// the first rayon use; a pool that is already initialized is left alone.
pub fn configure_threads() {
    if let Ok(v) = std::env::var("MFCLAB_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
