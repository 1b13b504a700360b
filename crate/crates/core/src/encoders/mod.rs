//! Image augmentation, the residual image encoder and the self-attention
//! text encoder.

mod augment;
mod image;
mod text;

use serde::{Deserialize, Serialize};

pub use augment::{resize_square, transform_image, AugmentParams};
pub use image::{apply_updates, recalibrate_stats, BufferUpdates, ImageEncoder, ImageEncoderConfig};
pub use text::{pool_block_outputs, TextEncoder, TextEncoderConfig, TextEncoding};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}
