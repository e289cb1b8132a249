//! Deterministic rasterizer used in offline runs and tests.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::RegionSpec;
use crate::image::ImageHandle;
use crate::scene::{BBox, LayoutSet};

pub type Rgb = [u8; 3];

fn rgb_of(bytes: &[u8]) -> Rgb {
    let d = Sha256::digest(bytes);
    [d[0], d[1], d[2]]
}

/// Region color: first three bytes of SHA-256 over the content key.
pub fn region_color(content_key: &str) -> Rgb {
    rgb_of(content_key.as_bytes())
}

/// Background color for a text and seed.
pub fn background_color(text: &str, seed: u64) -> Rgb {
    rgb_of(format!("{text}\u{0}{seed}").as_bytes())
}

/// Pixel span `[lo, hi)` covered by a box edge pair: minimum edges round
/// down, maximum edges round up.
pub fn pixel_span(lo: f64, hi: f64, size: u32) -> (u32, u32) {
    let s = size as f64;
    let a = (lo * s).floor().clamp(0.0, s) as u32;
    let b = (hi * s).ceil().clamp(0.0, s) as u32;
    (a, b.max(a))
}

pub fn pixel_rect(b: &BBox, width: u32, height: u32) -> ((u32, u32), (u32, u32)) {
    (
        pixel_span(b.x_min(), b.x_max(), width),
        pixel_span(b.y_min(), b.y_max(), height),
    )
}

pub fn solid(width: u32, height: u32, color: Rgb) -> Vec<u8> {
    color
        .iter()
        .copied()
        .cycle()
        .take(width as usize * height as usize * 3)
        .collect()
}

/// Renders `layout` from scratch: a solid background, then one filled
/// rectangle per object in ascending z_order. Objects missing from
/// `regions` are keyed by their id.
pub fn render(
    layout: &LayoutSet,
    regions: &BTreeMap<String, RegionSpec>,
    background: Rgb,
    width: u32,
    height: u32,
) -> ImageHandle {
    let mut px = solid(width, height, background);
    let mut order: Vec<_> = layout.placed.iter().collect();
    order.sort_by_key(|p| p.z_order);
    for p in order {
        let key = regions
            .get(&p.descriptor_id)
            .map_or(p.descriptor_id.as_str(), |r| r.content_key.as_str());
        let color = region_color(key);
        let ((x0, x1), (y0, y1)) = pixel_rect(&p.bbox, width, height);
        for y in y0..y1 {
            let row = (y as usize * width as usize) * 3;
            for x in x0..x1 {
                let i = row + x as usize * 3;
                px[i..i + 3].copy_from_slice(&color);
            }
        }
    }
    ImageHandle::from_rgb8(width, height, px).expect("buffer sized from dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_round_outward() {
        assert_eq!(pixel_span(0.25, 0.75, 512), (128, 384));
        assert_eq!(pixel_span(0.1, 0.2, 10), (1, 2));
        assert_eq!(pixel_span(0.101, 0.199, 10), (1, 2));
        assert_eq!(pixel_span(0.0, 1.0, 7), (0, 7));
    }

    #[test]
    fn colors_are_stable() {
        // SHA-256("abc") = ba7816bf...
        assert_eq!(region_color("abc"), [0xba, 0x78, 0x16]);
        assert_eq!(background_color("x", 1), background_color("x", 1));
        assert_ne!(background_color("x", 1), background_color("x", 2));
    }
}
