//! Serverless peer-to-peer replication of a shared construction world.
//!
//! Peers exchange single-line text frames ([`wire`]) over a broadcast
//! [`transport`]: a deterministic simulated bus for tests or UDP multicast on a
//! LAN. Each peer runs a sans-IO [`engine::PeerEngine`] that handles team
//! discovery, joining, world synchronization and deduplication. The
//! [`game`] module adds question-gated construction on top, [`chat`] adds team
//! messaging, and [`world`] and [`questions`] own the XML files.

pub mod chat;
pub mod command;
pub mod engine;
pub mod game;
pub mod questions;
pub mod scenario;
pub mod sim;
pub mod transport;
pub mod wire;
pub mod world;
pub mod xml;
