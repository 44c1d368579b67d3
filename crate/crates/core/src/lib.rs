//! Fuzzy multi-agent product configuration.
//!
//! Requirements, functions, constraints and solutions are communities of
//! fuzzy agents linked by relations with membership degrees in `[0, 1]`.
//! A run rates every solution, lets each solution propose the
//! configuration it prefers, and groups solutions and configurations by
//! consensus seeking. Optionally the communities are first clustered into
//! super-agents ("generalized" mode).
//!
//! The relation and consensus layers are generic over [`Scalar`] (`f32`,
//! `f64`, exact rationals). The pipeline and model documents use `f64`.
//!
//! ```
//! let model = fuzzcfg::io::fixtures::conveyor();
//! let result = fuzzcfg::run_configuration(&model).unwrap();
//! assert_eq!(
//!     result.optimal_configurations[0].row(),
//!     "S1 S2 S3 S5 S7 S9 S10 S12 S15 S18 S20 S23 S25 S28"
//! );
//! ```

pub mod agent;
pub mod consensus;
pub mod fuzzy;
pub mod id;
pub mod io;
pub mod pipeline;
pub mod scalar;

use num_rational::Rational64;

pub use agent::{AgentSystem, CommunityKind, FuzzyAgent, Message, Payload, SweepSchedule};
pub use consensus::{
    co_cluster, seek_consensus, CoClustering, ConsensusGroup, ConsensusOutcome, ConsensusParams,
    Partition,
};
pub use fuzzy::{compose_max_min, FuzzyRelation, FuzzyValue, RelationData};
pub use id::AgentId;
pub use pipeline::{
    apply_update, run_configuration, run_configuration_observed, ConfigurationModel,
    ConfigurationResult, Configuration, Update,
};
pub use scalar::Scalar;

pub type Relation = FuzzyRelation<f64>;
pub type Membership = FuzzyValue<f64>;
pub type Relation32 = FuzzyRelation<f32>;
pub type ExactRelation = FuzzyRelation<Rational64>;
pub type ExactMembership = FuzzyValue<Rational64>;
pub type Params = ConsensusParams<f64>;
pub type ExactParams = ConsensusParams<Rational64>;
