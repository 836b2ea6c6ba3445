use std::collections::VecDeque;

use super::{BinaryImage, GrayImage, ImageError, ImageMeta, Laterality, Result};

/// Intensity above which a pixel counts as foreground.
pub const FOREGROUND_THRESHOLD: u8 = 10;
/// Canonical size of a preprocessed image (2:1).
pub const PREPROCESSED_H: usize = 512;
pub const PREPROCESSED_W: usize = 256;

/// Largest 8-connected component of pixels brighter than 10.
pub fn segment_breast(img: &GrayImage) -> Result<BinaryImage> {
    let (h, w) = (img.height(), img.width());
    let mut label = vec![0u32; h * w];
    let mut best = (0u32, 0usize);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if label[start] != 0 || img.pixels()[start] <= FOREGROUND_THRESHOLD {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (y, x) = (i / w, i % w);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if label[j] == 0 && img.pixels()[j] > FOREGROUND_THRESHOLD {
                        label[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
        if size > best.1 {
            best = (next, size);
        }
    }
    if best.1 == 0 {
        return Err(ImageError::EmptyForeground);
    }
    BinaryImage::new(h, w, label.iter().map(|&l| l == best.0).collect())
}

/// Crops to the mask's bounding box, zeroes pixels outside the mask and pads
/// symmetrically with zeros to an exact 2:1 height:width ratio.
pub fn crop_pad(img: &GrayImage, mask: &BinaryImage) -> Result<GrayImage> {
    let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(y, x) {
                y0 = y0.min(y);
                y1 = y1.max(y);
                x0 = x0.min(x);
                x1 = x1.max(x);
            }
        }
    }
    if y0 == usize::MAX {
        return Err(ImageError::EmptyForeground);
    }
    let (h, w) = (y1 - y0 + 1, x1 - x0 + 1);
    let out_w = w.max(h.div_ceil(2));
    let out_h = 2 * out_w;
    let (top, left) = ((out_h - h) / 2, (out_w - w) / 2);
    let mut out = GrayImage::filled(out_h, out_w, 0);
    for y in 0..h {
        for x in 0..w {
            if mask.get(y0 + y, x0 + x) {
                out.set(top + y, left + x, img.get(y0 + y, x0 + x));
            }
        }
    }
    Ok(out)
}

/// Horizontal flip of right-breast images.
pub fn mirror_if_right(img: &GrayImage, meta: &ImageMeta) -> GrayImage {
    match meta.laterality {
        Laterality::L => img.clone(),
        Laterality::R => GrayImage::from_fn(img.height(), img.width(), |y, x| img.get(y, img.width() - 1 - x)),
    }
}

/// Bilinear interpolation with pixel centres at half-integer coordinates.
pub fn resize_bilinear(img: &GrayImage, h: usize, w: usize) -> GrayImage {
    assert!(h > 0 && w > 0, "resize target must be non-empty");
    if (h, w) == (img.height(), img.width()) {
        return img.clone();
    }
    let taps = |dst: usize, src: usize| -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(src - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let ys = taps(h, img.height());
    let xs = taps(w, img.width());
    GrayImage::from_fn(h, w, |y, x| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = img.get(y0, x0) as f64 * (1.0 - fx) + img.get(y0, x1) as f64 * fx;
        let bottom = img.get(y1, x0) as f64 * (1.0 - fx) + img.get(y1, x1) as f64 * fx;
        (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8
    })
}

/// Segment, crop and pad, mirror right breasts, resize to 512×256.
pub fn preprocess(img: &GrayImage, meta: &ImageMeta) -> Result<GrayImage> {
    let mask = segment_breast(img)?;
    let cropped = crop_pad(img, &mask)?;
    Ok(resize_bilinear(&mirror_if_right(&cropped, meta), PREPROCESSED_H, PREPROCESSED_W))
}
