//! Review queue, relabel log and serialized retraining jobs, exposed over
//! HTTP/JSON. State is rebuilt from an append-only event log on start.

pub mod error;
pub mod events;
pub mod http;
pub mod service;
pub mod state;

pub use error::ServiceError;
pub use events::{Event, PathologySelector, RelabelEvent, RetrainRequest, Verdict};
pub use http::{router, serve};
pub use service::{LoopService, RetrainBody, Workspace};
pub use state::{JobRecord, JobStatus, LoopState};
