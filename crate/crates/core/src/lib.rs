//! Agent capability negotiation and binding.
//!
//! Agents publish signed capability records to a name service, requesters
//! discover and score candidates, open authenticated sessions with the best
//! few, agree on one provider, bind terms with a dual-signed commitment,
//! execute, and settle with a reputation update and an audit entry.
//!
//! The crate is organised bottom-up:
//!
//! * [`encoding`] and [`crypto`]: canonical bytes, signatures, hashes.
//! * [`model`]: capability, query, record and version types plus matching.
//! * [`envelope`]: signed messages and the replay window.
//! * [`registry`]: the name service with admission control.
//! * [`cps`]: candidate scoring and ranking.
//! * [`negotiation`]: requester and provider state machines.
//! * [`audit`]: the hash-chained log.
//! * [`sim`] and [`scenario`]: deterministic simulation and fixtures.

pub mod audit;
pub mod cert;
pub mod clock;
pub mod cps;
pub mod crypto;
pub mod encoding;
pub mod envelope;
pub mod fixture;
pub mod model;
pub mod negotiation;
pub mod registry;
pub mod scenario;
pub mod sim;

pub use clock::VirtualClock;
