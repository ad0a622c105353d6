//! PNG and binary PPM decoding and PNG encoding.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Frame, GrayImage};

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image { path: path.to_path_buf(), message: e.to_string() }
}

fn reader(bytes: &[u8]) -> Result<ImageReader<Cursor<&[u8]>>> {
    ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::Input(e.to_string()))
        .and_then(|r| match r.format() {
            Some(ImageFormat::Png | ImageFormat::Pnm) => Ok(r),
            other => Err(Error::Input(format!("unsupported image format {other:?}"))),
        })
}

/// Decodes a PNG or binary PPM into RGB.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame> {
    let img = reader(bytes)?.decode().map_err(|e| Error::Input(e.to_string()))?.to_rgb8();
    Frame::new(img.width() as usize, img.height() as usize, img.into_raw())
}

/// Decodes a PNG or PGM/PPM into a single 8-bit channel.
pub fn decode_gray(bytes: &[u8]) -> Result<GrayImage> {
    let img = reader(bytes)?.decode().map_err(|e| Error::Input(e.to_string()))?.to_luma8();
    GrayImage::new(img.width() as usize, img.height() as usize, img.into_raw())
}

/// Decodes a mask image; values of 128 and above are foreground.
pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask> {
    Ok(BinaryMask::from_gray(&decode_gray(bytes)?))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_frame(path: &Path) -> Result<Frame> {
    decode_frame(&read_bytes(path)?).map_err(|e| image_err(path, e))
}

pub fn read_gray(path: &Path) -> Result<GrayImage> {
    decode_gray(&read_bytes(path)?).map_err(|e| image_err(path, e))
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    Ok(BinaryMask::from_gray(&read_gray(path)?))
}

/// Width and height from the header alone.
pub fn dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .into_dimensions()
        .map_err(|e| image_err(path, e))?;
    Ok((w as usize, h as usize))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

pub fn write_frame_png(path: &Path, frame: &Frame) -> Result<()> {
    ensure_parent(path)?;
    image::save_buffer_with_format(
        path,
        frame.rgb(),
        frame.width() as u32,
        frame.height() as u32,
        image::ExtendedColorType::Rgb8,
        ImageFormat::Png,
    )
    .map_err(|e| image_err(path, e))
}

pub fn write_gray_png(path: &Path, img: &GrayImage) -> Result<()> {
    ensure_parent(path)?;
    image::save_buffer_with_format(
        path,
        &img.data,
        img.width as u32,
        img.height as u32,
        image::ExtendedColorType::L8,
        ImageFormat::Png,
    )
    .map_err(|e| image_err(path, e))
}

/// Single-channel PNG with values `{0, 255}`.
pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_gray_png(path, &mask.to_gray())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_and_png_round_trip() {
        let mut ppm = b"P6\n2 1\n255\n".to_vec();
        ppm.extend_from_slice(&[10, 20, 30, 200, 100, 0]);
        let f = decode_frame(&ppm).unwrap();
        assert_eq!(f.rgb(), &[10, 20, 30, 200, 100, 0]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b/frame.png");
        write_frame_png(&path, &f).unwrap();
        assert_eq!(read_frame(&path).unwrap(), f);
        assert_eq!(dimensions(&path).unwrap(), (2, 1));

        let mask = BinaryMask::from_fn(3, 2, |x, y| x == y);
        let mpath = dir.path().join("mask.png");
        write_mask_png(&mpath, &mask).unwrap();
        assert_eq!(read_gray(&mpath).unwrap().data, vec![255, 0, 0, 0, 255, 0]);
        assert_eq!(read_mask(&mpath).unwrap(), mask);
    }

    #[test]
    fn garbage_is_an_error() {
        assert!(decode_frame(b"not an image").is_err());
        assert!(decode_frame(b"P6\n2 2\n255\n\x00").is_err());
        assert!(matches!(read_frame(Path::new("/nonexistent/x.png")), Err(Error::Io { .. })));
    }
}
