//! Command-line entry points and the HTTP service.

pub mod commands;
pub mod dataset;
pub mod service;

use clap::Parser;

/// Exit status for validation failures.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit status for filesystem failures.
pub const EXIT_IO: i32 = 2;

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match commands::Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { 0 };
        }
    };
    match commands::run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                EXIT_IO
            } else {
                EXIT_VALIDATION
            }
        }
    }
}
