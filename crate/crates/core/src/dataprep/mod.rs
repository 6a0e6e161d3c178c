//! Dataset manifests, background removal, centre embedding, right-angle
//! rotation and object-level three-way splitting.

mod manifest;
mod split;
mod transform;

pub use manifest::{
    load_manifest, parse_manifest, CanvasSpec, DatasetManifest, ManifestHeader, SampleRecord,
};
pub use split::{three_way_split, ThreeWaySplit};
pub use transform::{
    apply_mask, center_embed, measure_canvas, measure_canvas_masks, rotate_augment, rotate_image,
    rotate_mask,
};
