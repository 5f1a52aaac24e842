//! Tensor arithmetic, layer primitives with reverse-mode rules, parameter
//! sets with SGD, and learning-rate schedules.

pub mod element;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod par;
pub mod params;
pub mod schedule;
pub mod stats;
pub mod tensor;

pub use element::{lit, DType, Element};
pub use graph::{inject_fault, Gradients, Graph, OpKind, Var};
pub use kernels::EPS_STD;
pub use params::{sgd_step, Bound, Param, ParamSet};
pub use schedule::{learning_rate, ScheduleSpec};
pub use stats::{channel_stats, ChannelStats};
pub use tensor::Tensor;
