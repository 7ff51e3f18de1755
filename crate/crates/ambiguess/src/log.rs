//! Progress messages on stderr, stamped with seconds since start. Machine
//! outputs never pass through here.

use std::fmt::Display;
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct Logger {
    quiet: bool,
    start: Instant,
}

impl Logger {
    pub fn new(quiet: bool) -> Self {
        Logger {
            quiet,
            start: Instant::now(),
        }
    }

    pub fn quiet() -> Self {
        Self::new(true)
    }

    pub fn info(&self, msg: impl Display) {
        if !self.quiet {
            eprintln!("[{:8.1}s] {msg}", self.start.elapsed().as_secs_f64());
        }
    }

    pub fn warn(&self, msg: impl Display) {
        eprintln!("[{:8.1}s] warning: {msg}", self.start.elapsed().as_secs_f64());
    }
}
