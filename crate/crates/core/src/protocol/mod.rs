//! Client/cloud training protocol.
//!
//! The client prepares and encrypts its data, the cloud runs NAG steps on
//! ciphertexts and asks the client for refreshes when depth runs out. Both
//! sides talk through a [`Transport`] carrying framed [`Message`]s.

pub mod client;
pub mod cloud;
pub mod config;
pub mod data;
pub mod message;
pub mod oracle;
pub mod session;
pub mod transport;

pub use client::{client_prepare, ClientState};
pub use cloud::{run_cloud, CloudOutcome, Link, LinkStats};
pub use config::{dataset_defaults, DatasetDefaults, TrainingConfig, DATASET_DEFAULTS};
pub use data::{
    accuracy, batch_slice, one_hot, plan_batches, prepare, split_indices, BatchPlan, FeatureDataset, PreparedData,
    SplitTag,
};
pub use message::{decode, encode, parse_header, peek_config, Control, DatasetUpload, EncBatch, Header, Message, Tag};
pub use oracle::{plaintext_oracle_train, OracleRun};
pub use session::{allowed_tags, replay_cloud, run_local_session, scan_transcript, ScanReport, SessionOptions, SessionOutcome};
pub use transport::{channel_pair, ChannelTransport, FileTransport, Frame, Role, SharedTranscript, Transcript, Transport};
