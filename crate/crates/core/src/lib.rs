//! Moderation and culture analytics for chat communities.

pub mod cli;
pub mod config;
pub mod contribution;
pub mod cost;
pub mod domain;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod gateway;
pub mod ingest;
pub mod pipeline;
pub mod moderation;
pub mod persona;
pub mod sentiment;
pub mod service;
pub mod store;

pub use error::{ApiError, Error, ErrorCode, Result};
