//! Reverse-mode autodiff on dense f64 tensors and the aeration
//! reconstruction / segmentation networks built on it.

pub mod augment;
pub mod calibrate;
pub mod conv;
pub mod features;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod luna;
pub mod norm;
pub mod optim;
pub mod params;
pub mod seg;
pub mod spectral;
pub mod tape;
pub mod tensor;

pub use luna::{Luna, LunaConfig, LunaInput};
pub use params::{Ctx, Mode, ParamStore};
pub use seg::{SegConfig, SegNet};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
