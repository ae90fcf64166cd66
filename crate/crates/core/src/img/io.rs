use super::ImageBuffer;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad ppm: {0}")]
    BadPpm(String),
    #[error("png error: {0}")]
    Png(#[from] image::ImageError),
}

/// Writes binary PPM (P6, 8-bit). The byte stream is a pure function of the
/// image contents, which makes PPM the golden-file format of the test suite.
pub fn write_ppm(path: &Path, img: &ImageBuffer) -> Result<(), ImageIoError> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "P6\n{} {}\n255\n", img.width(), img.height())?;
    w.write_all(&img.to_bytes())?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<ImageBuffer, ImageIoError> {
    let bytes = fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    // Header: magic, width, height, maxval, then a single whitespace byte.
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    pos += 1; // single whitespace after maxval
    if fields.len() != 4 || fields[0] != "P6" {
        return Err(ImageIoError::BadPpm("expected P6 header".into()));
    }
    let parse = |s: &str| {
        s.parse::<usize>().map_err(|_| ImageIoError::BadPpm(format!("bad number {s:?}")))
    };
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(ImageIoError::BadPpm(format!("unsupported maxval {maxval}")));
    }
    let need = w * h * 3;
    if bytes.len() < pos + need {
        return Err(ImageIoError::BadPpm("truncated pixel data".into()));
    }
    Ok(ImageBuffer::from_bytes(w, h, &bytes[pos..pos + need]))
}

pub fn write_png(path: &Path, img: &ImageBuffer) -> Result<(), ImageIoError> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_bytes())
        .expect("buffer size matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Reads PPM or PNG based on the file extension.
pub fn read_image(path: &Path) -> Result<ImageBuffer, ImageIoError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => read_ppm(path),
        _ => {
            let img = image::open(path)?.into_rgb8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            Ok(ImageBuffer::from_bytes(w, h, img.as_raw()))
        }
    }
}
