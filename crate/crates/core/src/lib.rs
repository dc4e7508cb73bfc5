#![no_std]

extern crate alloc;

pub mod error;
pub mod linalg;
pub mod model;
pub mod synthesis;
pub mod control;
pub mod mapping;
pub mod course;
pub mod world;
pub mod record;

pub use error::{Error, Result};
