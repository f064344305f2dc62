//! Lightweight authentication and key agreement for cloud-edge-device
//! deployments.
//!
//! Constrained devices authenticate to nearby edge servers using nothing
//! but hashing and XOR masking. When the edge server can satisfy the
//! requested service itself, device and edge server finish a three-message
//! exchange with a shared session key. When the service lives in the
//! cloud, the edge server relays the request to a capable cloud server and
//! the device ends up sharing a key with that cloud server instead, still
//! without any public-key operations on the device.
//!
//! A trust authority provisions every party out of band and is never
//! contacted during authentication. Devices hold pools of single-purpose
//! pseudonyms and masked credentials, so eavesdroppers cannot link two
//! sessions of the same device.
//!
//! The crate is organized around four roles, [`ta`], [`device`], [`edge`]
//! and [`cloud`], a shared [`wire`] codec, and a [`harness`] that runs
//! whole deployments in-process: honest mixes, scripted adversaries, and
//! instrumented cost measurements. The `examples/` directory walks through
//! each capability end to end.

pub mod caps;
pub mod cli;
pub mod cloud;
pub mod crypto;
pub mod device;
pub mod edge;
pub mod harness;
pub mod snapshot;
pub mod ta;
pub mod wire;

/// Seconds a message timestamp may lag the receiver's clock.
pub const DEFAULT_FRESHNESS_WINDOW: u32 = 5;
/// Failed logins tolerated before a device store locks.
pub const DEFAULT_LOCKOUT_LIMIT: u32 = 3;
/// Pseudonym/credential pairs issued per device per edge server.
pub const DEFAULT_POOL_SIZE: u32 = 16;
