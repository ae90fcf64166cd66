use nalgebra::Vector2;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

/// A putative correspondence between two images.
///
/// Keypoint ids identify detections within each image and are what links
/// matches into multi-view tracks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub image_a: usize,
    pub image_b: usize,
    pub keypoint_a: usize,
    pub keypoint_b: usize,
    pub point_a: Vector2<f64>,
    pub point_b: Vector2<f64>,
}

#[derive(Debug, Error)]
pub enum MatchIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Writes matches in the text interchange format, one match per line:
///
/// ```text
/// image_a image_b x_a y_a x_b y_b [keypoint_a keypoint_b]
/// ```
///
/// Lines starting with `#` are comments. Keypoint ids are optional on read;
/// when absent they are assigned by de-duplicating exact pixel coordinates
/// per image.
pub fn write_matches(path: &Path, matches: &[Match]) -> Result<(), MatchIoError> {
    let mut out = String::new();
    out.push_str("# image_a image_b x_a y_a x_b y_b keypoint_a keypoint_b\n");
    for m in matches {
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            m.image_a, m.image_b, m.point_a.x, m.point_a.y, m.point_b.x, m.point_b.y,
            m.keypoint_a, m.keypoint_b
        )
        .expect("write to string");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_matches(path: &Path) -> Result<Vec<Match>, MatchIoError> {
    let text = std::fs::read_to_string(path)?;
    parse_matches(&text)
}

pub fn parse_matches(text: &str) -> Result<Vec<Match>, MatchIoError> {
    let mut out = Vec::new();
    // (image, exact pixel bits) -> keypoint id, for files without ids.
    let mut auto_ids: HashMap<(usize, u64, u64), usize> = HashMap::new();
    let mut next_id: HashMap<usize, usize> = HashMap::new();

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 && fields.len() != 8 {
            return Err(MatchIoError::Parse {
                line: lineno + 1,
                msg: format!("expected 6 or 8 fields, got {}", fields.len()),
            });
        }
        let err = |msg: String| MatchIoError::Parse { line: lineno + 1, msg };
        let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("{s:?}: {e}")));
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
        let (image_a, image_b) = (int(fields[0])?, int(fields[1])?);
        if image_a == image_b {
            return Err(err("match within a single image".into()));
        }
        let point_a = Vector2::new(num(fields[2])?, num(fields[3])?);
        let point_b = Vector2::new(num(fields[4])?, num(fields[5])?);
        let mut auto = |image: usize, p: &Vector2<f64>| {
            let key = (image, p.x.to_bits(), p.y.to_bits());
            *auto_ids.entry(key).or_insert_with(|| {
                let id = next_id.entry(image).or_insert(0);
                let v = *id;
                *id += 1;
                v
            })
        };
        let (keypoint_a, keypoint_b) = if fields.len() == 8 {
            (int(fields[6])?, int(fields[7])?)
        } else {
            (auto(image_a, &point_a), auto(image_b, &point_b))
        };
        out.push(Match { image_a, image_b, keypoint_a, keypoint_b, point_a, point_b });
    }
    Ok(out)
}
