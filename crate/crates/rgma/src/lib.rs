//! Networked services for the monitoring framework: a tokio driver for
//! the core node, a client library, the HTTP long-poll consumer front end
//! and the pieces behind the `rgma` and `rgmad` commands.

pub mod client;
pub mod components;
pub mod display;
pub mod http;
pub mod net;
pub mod service;
pub mod session;

pub use client::{Client, ClientError};
pub use service::{now_ms, Service};
