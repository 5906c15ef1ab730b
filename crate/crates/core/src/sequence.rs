//! Sequence directories: numbered PPM frames plus `groundtruth.txt`
//! (`x,y,w,h` per line, top-left corner form).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CoreError, Result};
use crate::geometry::BBox;
use crate::image::Image;

pub const GROUNDTRUTH: &str = "groundtruth.txt";

#[derive(Debug, Clone)]
pub struct Sequence {
    pub dir: PathBuf,
    pub frames: Vec<PathBuf>,
    /// One box per frame; may be shorter than `frames` but never empty.
    pub gt: Vec<BBox>,
}

impl Sequence {
    pub fn open(dir: &Path) -> Result<Self> {
        let entries = fs::read_dir(dir).map_err(|e| CoreError::io(dir, e))?;
        let mut frames = Vec::new();
        for e in entries {
            let p = e.map_err(|e| CoreError::io(dir, e))?.path();
            if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")) {
                frames.push(p);
            }
        }
        frames.sort();
        if frames.is_empty() {
            return Err(CoreError::data(format!("no .ppm frames in {}", dir.display())));
        }
        let gt_path = dir.join(GROUNDTRUTH);
        let text = fs::read_to_string(&gt_path).map_err(|e| CoreError::io(&gt_path, e))?;
        let gt = parse_boxes(&text).map_err(|e| CoreError::data(format!("{}: {e}", gt_path.display())))?;
        if gt.is_empty() {
            return Err(CoreError::data(format!("{} has no first box", gt_path.display())));
        }
        Ok(Sequence { dir: dir.to_path_buf(), frames, gt })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, i: usize) -> Result<Image> {
        Image::load(&self.frames[i])
    }
}

/// Parses `x,y,w,h` lines (commas, tabs or spaces) into boxes.
pub fn parse_boxes(text: &str) -> std::result::Result<Vec<BBox>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", i + 1))?;
        let [x, y, w, h] = v[..] else {
            return Err(format!("line {}: expected 4 values, got {}", i + 1, v.len()));
        };
        out.push(BBox::from_xywh(x, y, w, h));
    }
    Ok(out)
}

/// Boxes as `x,y,w,h` lines; `None` keeps full precision.
pub fn format_boxes(boxes: &[BBox], decimals: Option<usize>) -> String {
    let mut s = String::new();
    for b in boxes {
        let v = b.to_xywh();
        let line: Vec<String> = v
            .iter()
            .map(|x| match decimals {
                Some(d) => format!("{x:.d$}"),
                None => x.to_string(),
            })
            .collect();
        let _ = writeln!(s, "{}", line.join(","));
    }
    s
}

pub fn write_sequence(dir: &Path, frames: &[Image], gt: &[BBox]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        f.save(&dir.join(format!("{:04}.ppm", i + 1)))?;
    }
    let p = dir.join(GROUNDTRUTH);
    fs::write(&p, format_boxes(gt, None)).map_err(|e| CoreError::io(&p, e))
}
