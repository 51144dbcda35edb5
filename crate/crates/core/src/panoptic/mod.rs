//! Class taxonomy registry ("things"/"stuff" with traversability metadata)
//! and the mask-source abstraction that stands in for a segmentation network,
//! including confidence thresholding into discrete panoptic masks.

mod frame;
mod registry;
mod sources;

pub use frame::{threshold_frame, PanopticError, PanopticFrame, PanopticMask};
pub use registry::{ClassId, ClassKind, ClassRegistry, ClassSpec, RegistryError, UNKNOWN_CLASS, UNKNOWN_OBJECT_CLASS};
pub use sources::{append_index_line, write_frame_files, FileMaskSource, MaskSource, MaskSourceError};
