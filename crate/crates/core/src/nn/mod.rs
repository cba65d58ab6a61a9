//! InceptionMamba layers.
//!
//! Every layer is a plain struct of [`ParamId`]s created against a
//! [`ParamSpecs`] list. `forward` records the computation on a
//! [`Tape`](crate::autodiff::Tape) given the tape handles of the parameters,
//! so inference, training and gradient checks share one code path.

pub mod block;
pub mod layers;
pub mod mixer;
pub mod params;
pub mod ss2d;

pub use block::{ConvNorm, Head, InceptionMambaBlock, Mlp, PatchEmbed};
pub use layers::{Conv, Linear, Norm};
pub use mixer::{ConvGroup, ConvMixer, GlobalMixer};
pub use params::{Init, ParamId, ParamSpec, ParamSpecs, ParamStore};
pub use ss2d::Ss2d;
