//! Non-neural machinery for class-wise cell instance segmentation.
//!
//! Images are sorted into four categories by simple color and size rules
//! ([`classifier`]). Each category is served by one of two instance
//! representations:
//!
//! * star-convex polygons ([`stardist`]): an object-probability plane and `R`
//!   ray-distance planes, decoded by greedy polygon NMS;
//! * horizontal/vertical offset maps ([`hover`]): a cell-pixel map plus HV
//!   planes, decoded by marker-controlled watershed.
//!
//! Around those sit the loss kernels used to train such models ([`losses`]),
//! sliding-window tiling ([`tiler`]), instance-matching evaluation and the
//! running-time budget ([`metrics`]), file formats ([`tensor_io`]) and the
//! manifest-driven [`pipeline`].
//!
//! ```
//! use cellseg::{stardist, metrics, synth};
//!
//! let mask = synth::star_convex_scene(42, 128, 128);
//! let field = stardist::encode(&mask, 32)?;
//! let decoded = stardist::decode_nms(&field, &stardist::NmsConfig::default())?;
//! assert!(metrics::match_f1(&decoded, &mask)?.f1 > 0.9);
//! # Ok::<(), cellseg::Error>(())
//! ```

pub mod classifier;
mod edt;
pub mod error;
pub mod gradient;
pub mod hover;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod polygon;
pub mod selftest;
pub mod stardist;
pub mod synth;
pub mod tensor_io;
pub mod tiler;

pub use classifier::{categorize, ClassifierConfig, ImageCategory};
pub use error::{Error, Result};
pub use hover::{HoverField, WatershedConfig};
pub use metrics::{match_f1, MatchReport};
pub use stardist::{NmsConfig, RadialField};
pub use tensor_io::{FieldTensor, InstanceMap, RasterImage};

// The guide's snippets run as doctests.
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/classification.md")]
mod book_classification {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/stardist.md")]
mod book_stardist {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/hover.md")]
mod book_hover {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/losses.md")]
mod book_losses {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/tiling.md")]
mod book_tiling {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/metrics.md")]
mod book_metrics {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/formats.md")]
mod book_formats {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/pipeline.md")]
mod book_pipeline {}
