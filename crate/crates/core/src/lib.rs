//! Composite-field encoding for small-object detection, with a Gaussian voting
//! decoder, training losses, detection evaluation and a synthetic test harness.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod losses;
pub mod nms;
pub mod synth;
pub mod types;

pub use decoder::{decode, decode_no_voting, decode_with_map, DecodeOutput, HighResMap};
pub use encoder::{encode, EncodeMode};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalConfig, EvalReport, ImageEval, Interpolation};
pub use types::{
    cell_center, iou, BBox, ChiMode, ClassPlane, DecoderConfig, Detection, FieldCell, FieldGrid, Rho, SubpixelMode,
};
