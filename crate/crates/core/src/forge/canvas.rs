//! The conditioning canvas: white 1024×1024, first image resized into the
//! top-left 512×512 tile, second into the bottom-right tile.

use image::{imageops, DynamicImage, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::ForgeError;
use crate::store::{ImageRef, ImageStore};

/// Resize filter name recorded alongside every canvas.
pub const RESIZE_FILTER: &str = "bilinear";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanvasLayout {
    pub size: (u32, u32),
    pub tile: (u32, u32),
    pub a_origin: (u32, u32),
    pub b_origin: (u32, u32),
    pub fill: (u8, u8, u8),
}

impl CanvasLayout {
    pub const CANONICAL: CanvasLayout = CanvasLayout {
        size: (1024, 1024),
        tile: (512, 512),
        a_origin: (0, 0),
        b_origin: (512, 512),
        fill: (255, 255, 255),
    };

    pub fn is_canonical(&self) -> bool {
        *self == Self::CANONICAL
    }
}

impl Default for CanvasLayout {
    fn default() -> Self {
        Self::CANONICAL
    }
}

/// Pixel-level composition; order matters (`a` top-left, `b` bottom-right).
pub fn compose_canvas_image(a: &DynamicImage, b: &DynamicImage) -> RgbImage {
    let layout = CanvasLayout::CANONICAL;
    let (fr, fg, fb) = layout.fill;
    let mut canvas = RgbImage::from_pixel(layout.size.0, layout.size.1, Rgb([fr, fg, fb]));
    for (img, origin) in [(a, layout.a_origin), (b, layout.b_origin)] {
        let tile = imageops::resize(&img.to_rgb8(), layout.tile.0, layout.tile.1, imageops::FilterType::Triangle);
        imageops::replace(&mut canvas, &tile, origin.0 as i64, origin.1 as i64);
    }
    canvas
}

/// Composes and stores the canvas as PNG.
pub fn compose_canvas(store: &ImageStore, a: &ImageRef, b: &ImageRef) -> Result<ImageRef, ForgeError> {
    let canvas = compose_canvas_image(&a.decode()?, &b.decode()?);
    Ok(store.put_rgb(&canvas)?)
}
