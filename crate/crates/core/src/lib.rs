// Negated float comparisons reject NaN on purpose; hex seed tags group by ASCII byte;
// index loops mirror the math over parallel arrays.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::unusual_byte_groupings,
    clippy::suspicious_arithmetic_impl,
    clippy::needless_range_loop,
    clippy::large_enum_variant,
    clippy::type_complexity
)]

pub mod engine;
pub mod error;
pub mod experiment;
pub mod gmnm;
pub mod gradcheck;
pub mod module;
pub mod nets;
pub mod optim;
pub mod snapshot;
pub mod tasks;

pub use error::{Error, Result};
