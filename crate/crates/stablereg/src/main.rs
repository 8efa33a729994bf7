use std::process::ExitCode;

use clap::Parser;
use stablereg::cli::{main_with, Args};

fn main() -> ExitCode {
    main_with(Args::parse())
}
