//! Continual toxicity detection under evolving evasive perturbations.

pub mod corpus;
pub mod discrim;
pub mod enrich;
pub mod harness;
pub mod model;
pub mod perturb;
pub mod replay;
pub mod util;
