//! Hyperspectral data model, ENVI file I/O, label masks and synthetic scenes.

mod cube;
mod envi;
mod synth;

pub use cube::{default_class_name, unflatten, HyperCube, Interleave, LabelMask, UNLABELED};
pub use envi::{
    data_path_for, legend_json, parse_list, read_envi, read_header, read_mask_envi, read_pgm,
    write_envi, write_mask_envi, write_pgm, ByteOrder, DataType, EnviHeader,
};
pub use synth::{synth_scene, Blob, Material, SceneSpec, Shadow, ShadowAxis, WavelengthGrid};
