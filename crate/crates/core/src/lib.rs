//! Decentralized-identity fabric for autonomous agents.
//!
//! Agents own ledger-anchored DIDs, hold third-party issued verifiable
//! credentials and establish mutual trust through deterministic protocol
//! state machines, within one security domain and across domains.

pub mod clock;
pub mod credentials;
pub mod crypto;
pub mod did;
pub mod domain;
pub mod ledger;
pub mod presentation;
pub mod protocol;
pub mod runtime;
pub mod transport;
pub mod wallet;
