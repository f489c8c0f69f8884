//! Binary-to-image feature extraction.
//!
//! A byte sequence is laid out row-major as 8-bit grayscale pixels; the row
//! width comes from a size-bucketed policy (see [`width_for_len`]). For the
//! classifier the image is box-resampled to a fixed 64x64 plane and
//! normalized to [0,1].
//!
//! Resampling is done in exact integer arithmetic (area overlaps are
//! rationals with denominator `src_w * src_h`), so results are bit-identical
//! across platforms. Rounding is half-up on the 0-255 scale.

use thiserror::Error;

/// Side length of the classifier input plane.
pub const PLANE_SIDE: usize = 64;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("input byte sequence is empty")]
    EmptyInput,
    #[error("image dimensions must be nonzero (got {width}x{height})")]
    ZeroDimension { width: usize, height: usize },
    #[error("pixel buffer holds {got} values, expected {expected}")]
    PixelCountMismatch { expected: usize, got: usize },
    #[error("not a canonical P5 PGM: {0}")]
    BadPgm(String),
}

/// Rectangular one-channel image, row-major, intensities 0-255.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension { width, height });
        }
        if pixels.len() != width * height {
            return Err(ImageError::PixelCountMismatch {
                expected: width * height,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }
}

/// Row width for a file of `len` bytes: the size-bucketed table used by the
/// classic malware-image pipeline.
pub fn width_for_len(len: usize) -> usize {
    const KIB: usize = 1024;
    match len {
        l if l < 10 * KIB => 32,
        l if l < 30 * KIB => 64,
        l if l < 60 * KIB => 128,
        l if l < 100 * KIB => 256,
        l if l < 200 * KIB => 384,
        l if l < 500 * KIB => 512,
        l if l < 1000 * KIB => 768,
        _ => 1024,
    }
}

/// Interpret bytes as pixels, width chosen by [`width_for_len`].
pub fn bytes_to_image(data: &[u8]) -> Result<GrayImage, ImageError> {
    bytes_to_image_with_width(data, width_for_len(data.len()))
}

/// Same as [`bytes_to_image`] but with an explicit row width (test hook).
/// The final partial row, if any, is zero-padded.
pub fn bytes_to_image_with_width(data: &[u8], width: usize) -> Result<GrayImage, ImageError> {
    if data.is_empty() {
        return Err(ImageError::EmptyInput);
    }
    assert!(width > 0, "row width must be positive");
    let height = data.len().div_ceil(width);
    let mut pixels = vec![0u8; width * height];
    pixels[..data.len()].copy_from_slice(data);
    GrayImage::new(width, height, pixels)
}

/// Per-axis overlap spans between source cells and one target cell, in the
/// integer coordinate system scaled by the target dimension.
fn axis_spans(src: usize, dst: usize) -> Vec<(usize, Vec<u64>)> {
    // Source cell c covers [c*dst, (c+1)*dst); target cell t covers
    // [t*src, (t+1)*src). Sum of overlaps for fixed t is exactly src.
    (0..dst)
        .map(|t| {
            let lo = t * src;
            let hi = (t + 1) * src;
            let first = lo / dst;
            let mut weights = Vec::new();
            let mut c = first;
            while c * dst < hi {
                let s = (c * dst).max(lo);
                let e = ((c + 1) * dst).min(hi);
                weights.push((e - s) as u64);
                c += 1;
            }
            (first, weights)
        })
        .collect()
}

/// Area-weighted box resample to `dst_w` x `dst_h`, rounding half-up.
/// Exposed with an arbitrary target size as a test hook; the classifier
/// path goes through [`resize_to_plane`].
pub fn resize_area(img: &GrayImage, dst_w: usize, dst_h: usize) -> GrayImage {
    assert!(dst_w > 0 && dst_h > 0, "target dimensions must be positive");
    let cols = axis_spans(img.width, dst_w);
    let rows = axis_spans(img.height, dst_h);
    let denom = (img.width as u128) * (img.height as u128);
    let mut out = Vec::with_capacity(dst_w * dst_h);
    for (r0, rw) in &rows {
        for (c0, cw) in &cols {
            let mut num: u128 = 0;
            for (dy, wy) in rw.iter().enumerate() {
                let row = &img.pixels[(r0 + dy) * img.width..];
                let mut row_sum: u64 = 0;
                for (dx, wx) in cw.iter().enumerate() {
                    row_sum += row[c0 + dx] as u64 * wx;
                }
                num += row_sum as u128 * *wy as u128;
            }
            // Half-up: floor(num/denom + 1/2).
            out.push(((2 * num + denom) / (2 * denom)) as u8);
        }
    }
    GrayImage::new(dst_w, dst_h, out).expect("constructed consistently")
}

/// Exact rational values (numerator, denominator) of the box resample before
/// rounding; kept for invariant tests.
#[doc(hidden)]
pub fn resize_area_rational(img: &GrayImage, dst_w: usize, dst_h: usize) -> Vec<(u128, u128)> {
    let cols = axis_spans(img.width, dst_w);
    let rows = axis_spans(img.height, dst_h);
    let denom = (img.width as u128) * (img.height as u128);
    let mut out = Vec::with_capacity(dst_w * dst_h);
    for (r0, rw) in &rows {
        for (c0, cw) in &cols {
            let mut num: u128 = 0;
            for (dy, wy) in rw.iter().enumerate() {
                for (dx, wx) in cw.iter().enumerate() {
                    num += img.get(r0 + dy, c0 + dx) as u128 * (*wx as u128) * (*wy as u128);
                }
            }
            out.push((num, denom));
        }
    }
    out
}

/// 64x64 grid of normalized intensities in [0,1], the classifier input.
#[derive(Clone, Debug, PartialEq)]
pub struct InputPlane {
    values: Vec<f64>,
}

impl InputPlane {
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Resample to [`PLANE_SIDE`]^2 and scale intensities by 1/255.
pub fn resize_to_plane(img: &GrayImage) -> InputPlane {
    let resized = resize_area(img, PLANE_SIDE, PLANE_SIDE);
    InputPlane {
        values: resized.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    }
}

/// Full path from raw bytes to the classifier input plane.
pub fn bytes_to_plane(data: &[u8]) -> Result<InputPlane, ImageError> {
    Ok(resize_to_plane(&bytes_to_image(data)?))
}

/// Binary PGM ("P5"), maxval 255. Header uses single spaces and newlines,
/// no comments; the output is bit-exact for a given image.
pub fn image_to_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Parse the canonical PGM form produced by [`image_to_pgm`].
pub fn pgm_to_image(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let bad = |m: &str| ImageError::BadPgm(m.to_string());
    let rest = bytes.strip_prefix(b"P5\n").ok_or_else(|| bad("missing P5 magic"))?;
    let header_end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("unterminated dimension line"))?;
    let dims = std::str::from_utf8(&rest[..header_end]).map_err(|_| bad("non-ascii header"))?;
    let (w, h) = dims
        .split_once(' ')
        .ok_or_else(|| bad("dimension line needs one space"))?;
    let width: usize = w.parse().map_err(|_| bad("bad width"))?;
    let height: usize = h.parse().map_err(|_| bad("bad height"))?;
    let rest = &rest[header_end + 1..];
    let rest = rest
        .strip_prefix(b"255\n")
        .ok_or_else(|| bad("maxval must be 255"))?;
    if rest.len() != width * height {
        return Err(bad(&format!(
            "payload holds {} bytes, expected {}",
            rest.len(),
            width * height
        )));
    }
    GrayImage::new(width, height, rest.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn width_policy_buckets() {
        assert_eq!(width_for_len(1), 32);
        assert_eq!(width_for_len(10 * 1024 - 1), 32);
        assert_eq!(width_for_len(10 * 1024), 64);
        assert_eq!(width_for_len(30 * 1024), 128);
        assert_eq!(width_for_len(60 * 1024), 256);
        assert_eq!(width_for_len(100 * 1024), 384);
        assert_eq!(width_for_len(200 * 1024), 512);
        assert_eq!(width_for_len(500 * 1024), 768);
        assert_eq!(width_for_len(1000 * 1024), 1024);
        assert_eq!(width_for_len(50 << 20), 1024);
    }

    #[test]
    fn all_zero_4096_bytes() {
        // 4096 bytes sit in the <10 KiB bucket, so width 32 and height 128.
        let img = bytes_to_image(&vec![0u8; 4096]).unwrap();
        assert_eq!((img.width(), img.height()), (32, 128));
        assert!(img.pixels().iter().all(|&p| p == 0));
    }

    #[test]
    fn hundred_bytes_pads_final_row() {
        let data: Vec<u8> = (1..=100).collect();
        let img = bytes_to_image(&data).unwrap();
        assert_eq!((img.width(), img.height()), (32, 4));
        assert_eq!(&img.pixels()[..100], &data[..]);
        assert!(img.pixels()[100..].iter().all(|&p| p == 0));
        assert_eq!(img.pixels().len() - 100, 28);
    }

    #[test]
    fn forced_width_decodes_bytes_directly() {
        let img =
            bytes_to_image_with_width(&[0x00, 0xFF, 0x10, 0x20, 0x30, 0x40], 3).unwrap();
        assert_eq!((img.width(), img.height()), (3, 2));
        assert_eq!(img.pixels(), &[0, 255, 16, 32, 48, 64]);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(bytes_to_image(&[]), Err(ImageError::EmptyInput)));
    }

    #[test]
    fn two_by_two_average_rounds_to_191() {
        let img = GrayImage::new(2, 2, vec![0, 255, 255, 255]).unwrap();
        let out = resize_area(&img, 1, 1);
        // (0+255+255+255)/4 = 191.25
        assert_eq!(out.pixels(), &[191]);
    }

    #[test]
    fn identity_resize_is_identity() {
        let pixels: Vec<u8> = (0..64 * 64).map(|i| (i % 251) as u8).collect();
        let img = GrayImage::new(64, 64, pixels.clone()).unwrap();
        assert_eq!(resize_area(&img, 64, 64).pixels(), &pixels[..]);
        let plane = resize_to_plane(&img);
        for (v, p) in plane.values().iter().zip(&pixels) {
            assert_eq!(*v, *p as f64 / 255.0);
        }
    }

    #[test]
    fn constant_image_is_preserved_under_upscale() {
        let img = GrayImage::new(1, 1, vec![100]).unwrap();
        let plane = resize_to_plane(&img);
        assert_eq!(plane.values().len(), 64 * 64);
        assert!(plane.values().iter().all(|&v| v == 100.0 / 255.0));
    }

    #[test]
    fn half_up_rounding_at_exact_half() {
        // Mean 127.5 must round up to 128.
        let img = GrayImage::new(2, 1, vec![127, 128]).unwrap();
        assert_eq!(resize_area(&img, 1, 1).pixels(), &[128]);
    }

    #[test]
    fn pgm_single_black_pixel() {
        let img = GrayImage::new(1, 1, vec![0]).unwrap();
        assert_eq!(image_to_pgm(&img), b"P5\n1 1\n255\n\x00");
    }

    #[test]
    fn pgm_layout_matches_format_spec() {
        let img =
            bytes_to_image_with_width(&[0x00, 0xFF, 0x10, 0x20, 0x30, 0x40], 3).unwrap();
        let pgm = image_to_pgm(&img);
        assert_eq!(&pgm[..10], b"P5\n3 2\n255");
        assert_eq!(&pgm[11..], &[0x00, 0xFF, 0x10, 0x20, 0x30, 0x40]);
        assert_eq!(pgm_to_image(&pgm).unwrap(), img);
    }

    #[test]
    fn pgm_rejects_malformed_input() {
        assert!(pgm_to_image(b"P6\n1 1\n255\n\x00").is_err());
        assert!(pgm_to_image(b"P5\n1 1\n254\n\x00").is_err());
        assert!(pgm_to_image(b"P5\n2 1\n255\n\x00").is_err());
    }

    fn arb_image(max_side: usize) -> impl Strategy<Value = GrayImage> {
        (1..=max_side, 1..=max_side)
            .prop_flat_map(|(w, h)| {
                proptest::collection::vec(any::<u8>(), w * h)
                    .prop_map(move |px| GrayImage::new(w, h, px).unwrap())
            })
    }

    proptest! {
        #[test]
        fn padding_locality(data in proptest::collection::vec(any::<u8>(), 1..4000), width in 1usize..70) {
            let img = bytes_to_image_with_width(&data, width).unwrap();
            let n = data.len();
            let expected_pad = n.div_ceil(width) * width - n;
            prop_assert_eq!(&img.pixels()[..n], &data[..]);
            prop_assert_eq!(img.pixels().len() - n, expected_pad);
            prop_assert!(img.pixels()[n..].iter().all(|&p| p == 0));
        }

        #[test]
        fn plane_values_stay_in_unit_interval(img in arb_image(50)) {
            let plane = resize_to_plane(&img);
            prop_assert_eq!(plane.values().len(), 4096);
            prop_assert!(plane.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn constant_images_resize_to_the_constant(
            v in any::<u8>(),
            w in 1usize..40, h in 1usize..40,
            tw in 1usize..20, th in 1usize..20,
        ) {
            let img = GrayImage::new(w, h, vec![v; w * h]).unwrap();
            let out = resize_area(&img, tw, th);
            prop_assert!(out.pixels().iter().all(|&p| p == v));
        }

        #[test]
        fn mean_is_preserved_exactly_when_dims_divide(
            img in arb_image(36).prop_filter("even dims", |i| i.width() % 2 == 0 && i.height() % 2 == 0)
        ) {
            // Pre-rounding rational outputs: compare global means exactly.
            let (tw, th) = (img.width() / 2, img.height() / 2);
            let cells = resize_area_rational(&img, tw, th);
            let out_num: u128 = cells.iter().map(|(n, _)| n).sum();
            let den = cells[0].1;
            let in_sum: u128 = img.pixels().iter().map(|&p| p as u128).sum();
            // mean_out = out_num / (den*tw*th); mean_in = in_sum / (w*h)
            prop_assert_eq!(
                out_num * (img.width() * img.height()) as u128,
                in_sum * den * (tw * th) as u128
            );
        }

        #[test]
        fn resample_is_deterministic(img in arb_image(24), tw in 1usize..16, th in 1usize..16) {
            let a = resize_area(&img, tw, th);
            let b = resize_area(&img, tw, th);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn pgm_roundtrip_is_identity(img in arb_image(32)) {
            prop_assert_eq!(pgm_to_image(&image_to_pgm(&img)).unwrap(), img);
        }
    }
}
