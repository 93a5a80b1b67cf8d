use super::{Image, CHANNELS};

/// Height over width.
pub fn aspect_ratio(img: &Image) -> f64 {
    img.height() as f64 / img.width() as f64
}

/// Thumbnail height for `target_width`: `target_width · AR` rounded half-up,
/// never below one row.
pub fn resized_height(width: usize, height: usize, target_width: usize) -> usize {
    let exact = target_width as f64 * (height as f64 / width as f64);
    ((exact + 0.5).floor() as usize).max(1)
}

/// Bilinear interpolation at a real source coordinate. Coordinates are
/// clamped to the pixel-centre lattice, so out-of-range points take the
/// nearest edge value.
pub fn bilinear_sample(img: &Image, x: f64, y: f64) -> [f64; 3] {
    let max_x = (img.width() - 1) as f64;
    let max_y = (img.height() - 1) as f64;
    let x = x.clamp(0.0, max_x);
    let y = y.clamp(0.0, max_y);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as usize, y0 as usize);
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);

    let w00 = (1.0 - fx) * (1.0 - fy);
    let w10 = fx * (1.0 - fy);
    let w01 = (1.0 - fx) * fy;
    let w11 = fx * fy;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o = w00 * f64::from(img.sample(x0, y0, c))
            + w10 * f64::from(img.sample(x1, y0, c))
            + w01 * f64::from(img.sample(x0, y1, c))
            + w11 * f64::from(img.sample(x1, y1, c));
    }
    out
}

/// Half-pixel-centre mapping from an output index to a source coordinate.
#[inline]
pub(crate) fn source_coord(i: usize, scale: f64) -> f64 {
    (i as f64 + 0.5) / scale - 0.5
}

#[inline]
pub(crate) fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Aspect-preserving downscale to `target_width`. Images already at or
/// below the target width are returned unchanged.
pub fn thumbnail_resize(img: &Image, target_width: usize) -> Image {
    assert!(target_width >= 1, "target width must be positive");
    if target_width >= img.width() {
        return img.clone();
    }
    let out_w = target_width;
    let out_h = resized_height(img.width(), img.height(), target_width);
    let sx = out_w as f64 / img.width() as f64;
    let sy = out_h as f64 / img.height() as f64;
    let mut pixels = Vec::with_capacity(out_w * out_h * CHANNELS);
    for j in 0..out_h {
        let y = source_coord(j, sy);
        for i in 0..out_w {
            let x = source_coord(i, sx);
            pixels.extend(bilinear_sample(img, x, y).map(quantize));
        }
    }
    Image::new(out_w, out_h, pixels).expect("dimensions are positive by construction")
}
