//! 8-bit grayscale image primitives: PGM I/O, perspective warping,
//! histogram equalization and resampling.

mod equalize;
mod image;
mod resize;
mod warp;

pub use equalize::{equalize_histogram, equalization_map};
pub use image::{to_grayscale, GrayImage, ImageError};
pub use resize::{resize, ResizeMethod};
pub use warp::{perspective_warp, WarpOutput};
