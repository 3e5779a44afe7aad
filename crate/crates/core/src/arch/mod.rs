//! The change-detection network: context-guided blocks, the shared-weight
//! backbone, the two fusion pyramids and the prediction head.

pub mod backbone;
pub mod cgb;
pub mod fpn;
pub mod head;
pub mod layers;
pub mod model;
pub mod params;
pub mod session;
pub mod spec;

pub use backbone::{Backbone, FeaturePyramid};
pub use cgb::{context_gate, Cgb};
pub use fpn::{Fpn, FpnOutputs, FpnTopology, FusionNode, NodeKind, Source};
pub use head::{Head, HeadOutput};
pub use model::{ForwardOutput, LsNet};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use session::{Mode, Session};
pub use spec::{BackboneSpec, CgbSpec, FpnSpec, FpnVariant, ModelSpec, LEVELS};
