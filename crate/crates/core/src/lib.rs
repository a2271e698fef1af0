//! Drug-outcome signal refinement from longitudinal health records.
//!
//! The workspace turns patients, prescriptions and coded clinical events
//! into 27 causality attributes per drug-outcome pair and ranks pairs with
//! a random forest trained on a labelled reference set.

pub mod codes;
pub mod cohort;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod forest;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod snapshot;
pub mod store;
pub mod synth;

pub use codes::{equivalent_at, DrugCode, EventCode, FamilyMap};
pub use cohort::{Cohort, CohortConfig, CohortIndex, Label, PairKey, Window};
pub use error::{Error, Result};
pub use store::{EventStore, RawData, StoreConfig};
