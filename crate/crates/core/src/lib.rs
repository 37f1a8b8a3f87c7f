pub mod corpus;
pub mod eval;
pub mod groups;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;
