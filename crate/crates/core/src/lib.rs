//! Closed-loop token synchronization for wireless digital twins.
//!
//! Tokenized scene states are sent over simulated 16QAM fading links under
//! mode-conditioned unequal protection, recovered at the twin through
//! confidence gating and completion, and the synchronization mode of the
//! next frame is chosen from twin-side feedback statistics.

pub mod controller;
pub mod error;
pub mod harness;
pub mod head;
pub mod metrics;
pub mod par;
pub mod phy;
pub mod receiver;
pub mod rng;
pub mod scene;
pub mod types;
pub mod uep;

pub use error::{Result, TwistError};
pub use types::{
    EmbeddingMatrix, EmbeddingTable, GatedTokenGrid, GridShape, GroupMap, ModeProfile,
    ProtectionPolicy, SyncMode, Token, TokenAlphabet, TokenGrid,
};
