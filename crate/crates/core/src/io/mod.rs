//! File formats: float and 16-bit PNG disparity maps, RGB images,
//! parameter checkpoints and key-value configuration files.

mod checkpoint;
mod image;
mod keyvalue;
mod kitti;
mod pfm;

pub use checkpoint::{
    config_from_kv, config_to_kv, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint,
};
pub use image::{read_mask, read_rgb, write_mask, write_rgb};
pub use keyvalue::KeyValues;
pub use kitti::{decode_kitti, encode_kitti, read_kitti_png, write_kitti_png, KITTI_SCALE};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
