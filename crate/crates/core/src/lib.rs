//! Line planning with service-dependent demand.
//!
//! Lines and headways are chosen to minimize weighted passenger cost plus
//! operating cost minus fare revenue, where passengers whose best offered
//! route is too slow are lost to an alternative mode. The model is solved
//! exactly by dynamic frequency refinement ([`refinement::run`]).

pub mod cgn;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod milp;
pub mod model;
pub mod paths;
pub mod refinement;
pub mod samples;

pub use error::{Error, Result};
