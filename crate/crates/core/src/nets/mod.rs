pub mod actor;
pub mod critic;
pub mod dense;
pub mod meta;
pub mod snapshot;

pub use actor::{ActMode, Actor, ActorOutput, HeadKind};
pub use critic::Critic;
pub use dense::{polyak, Activation, DenseNet, Layer};
pub use meta::{MetaCriticNet, MetaVariant};
pub use snapshot::{format_snapshots, parse_snapshots, Snapshot};
