//! Library side of the `dynsync` command: scenario files and commands.

pub mod commands;
pub mod scenario_file;
