pub mod arch;
pub mod autograd;
pub mod conv;
pub mod data;
pub mod error;
pub mod metrics;
pub mod ops;
pub mod profiler;
pub mod tensor;
pub mod train;

pub use arch::{FpnVariant, LsNet, ModelSpec};
pub use autograd::{Grad, Graph, NodeId};
pub use conv::ConvSpec;
pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
