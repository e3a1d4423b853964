//! Annotation parsers, the binary field format and the detection text format.

mod annotations;
mod detections;
mod fields;

pub use annotations::{
    parse_uavdt, parse_visdrone, AnnotationRecord, VisDroneAnnotations, UAVDT_CLASSES, VISDRONE_CLASSES,
};
pub use detections::{read_detections, write_detections, ImageDetections};
pub use fields::{read_fields, write_fields, FIELDS_MAGIC, FIELDS_VERSION};
