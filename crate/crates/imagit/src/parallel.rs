//! Worker pool sizing.

pub const THREADS_ENV: &str = "IMAGIT_THREADS";

/// Size the global rayon pool from `IMAGIT_THREADS` when set. Later calls are
/// no-ops.
pub fn init_threads() -> crate::Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| crate::Error::Format(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
