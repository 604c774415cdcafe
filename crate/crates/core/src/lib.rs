//! Core library for `mapforge`: a four-agent competitive-programming
//! pipeline (retrieval, planning, coding, debugging) over chat-completion
//! endpoints, a local judge, and tooling that turns pipeline runs into
//! role-tagged fine-tuning corpora and adapter training manifests.

pub mod agent_xml;
pub mod config;
pub mod corpus;
pub mod curator;
pub mod emitter;
pub mod gateway;
pub mod metrics;
pub mod orchestrator;
pub mod role;
pub mod run_dir;
pub mod sandbox;

mod digest;
pub mod fsutil;

pub use role::AgentRole;
