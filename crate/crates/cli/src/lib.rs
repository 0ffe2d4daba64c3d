//! Library half of the `echo-cohort` binary: subcommands and the HTTP service.

pub mod commands;
pub mod home;
pub mod service;
