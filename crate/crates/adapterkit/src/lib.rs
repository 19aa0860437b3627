//! Lossless adaptation of frozen vision backbones for continuous control.
//!
//! The toolkit trains small bottleneck adapters inside frozen convolutional
//! and transformer backbones with behavior cloning, and makes the "lossless"
//! part machine-checkable: adapted models are bit-identical to the base
//! model at initialization, and base weights are provably untouched after
//! training (checksummed weight bundles referee the claim).
//!
//! The crate is organized around a small dense-tensor autodiff engine
//! ([`graph`]), toy backbones partitioned into bottom/middle/top sections
//! ([`backbone`]), adapter planning and injection ([`adapter`]), a policy
//! head ([`policy`]), a behavior-cloning trainer ([`train`]), deterministic
//! 2-D manipulation environments with scripted experts ([`env`]), a pretext
//! pretraining stage ([`pretext`]), bit-exact weight serialization
//! ([`bundle`]), shape-only parameter audits ([`audit`]), and an experiment
//! runner ([`runner`]) exposed through the `adapterkit` binary.
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod error;
pub mod element;
pub mod tensor;
pub mod ops;
pub mod graph;
pub mod gradcheck;
pub mod registry;
pub mod backbone;
pub mod adapter;
pub mod policy;
pub mod train;
pub mod env;
pub mod bundle;
pub mod pretext;
pub mod audit;
pub mod runner;

pub use element::{DType, Element};
pub use error::{Error, Result};
pub use graph::{Graph, GradMap, NodeId};
pub use ops::Op;
pub use registry::{Origin, OriginFilter, Parameter, ParameterRegistry, SectionTag};
pub use tensor::Tensor;
