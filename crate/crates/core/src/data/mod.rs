//! Synthetic scenes, depth-PNG I/O, preprocessing and the on-disk dataset layout.

pub mod dataset;
pub mod png;
pub mod preprocess;
pub mod scene;

pub use dataset::{read_dataset, read_meta, read_sample, write_dataset, write_meta, DatasetMeta, Split};
pub use png::{read_depth_png16, read_rgb_png8, write_depth_png16, write_rgb_png8};
pub use preprocess::{preprocess, Crop, DatasetProfile};
pub use scene::{generate_scene, render_scene, Scene, SceneConfig};
