//! Plain-text tracking annotations, one directory per video:
//!
//! - `groundtruth.txt`: `frame_index,x,y,w,h` per line, `frame_index` 0-based
//!   into the frame list. Commas, tabs or spaces separate fields. Frames
//!   without a line, or with `w ≤ 0` or `h ≤ 0`, have no target.
//! - `category.txt`: a COCO-80 name or id, or `other`.
//! - `frames.txt` (one path per line, relative to the video directory), or
//!   else the sorted file names under `img/`.

use std::fs;
use std::path::Path;

use super::{PixelBox, VideoAnnotation};
use crate::categories::category_id;
use crate::error::{Error, Result};

/// Parses `groundtruth.txt` text into per-frame boxes for `n_frames` frames.
pub fn parse_groundtruth(text: &str, n_frames: usize) -> Result<Vec<Option<PixelBox>>> {
    let mut boxes = vec![None; n_frames];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| Error::format("groundtruth.txt", format!("line {}: {reason}", lineno + 1));
        let fields: Vec<&str> =
            line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", fields.len())));
        }
        let frame: usize = fields[0].parse().map_err(|_| bad(format!("bad frame index `{}`", fields[0])))?;
        let mut v = [0f64; 4];
        for (slot, s) in v.iter_mut().zip(&fields[1..]) {
            *slot = s.parse().map_err(|_| bad(format!("bad number `{s}`")))?;
            if !slot.is_finite() {
                return Err(bad("non-finite coordinate".into()));
            }
        }
        let entry = boxes
            .get_mut(frame)
            .ok_or_else(|| bad(format!("frame {frame} beyond {n_frames} frames")))?;
        let [x, y, w, h] = v;
        *entry = (w > 0.0 && h > 0.0).then_some(PixelBox { x, y, w, h });
    }
    Ok(boxes)
}

fn frame_list(dir: &Path) -> Result<Vec<String>> {
    let listing = dir.join("frames.txt");
    if listing.exists() {
        let text = fs::read_to_string(&listing)?;
        return Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect());
    }
    let img = dir.join("img");
    if !img.is_dir() {
        return Err(Error::Missing(format!("frames.txt or img/ in {}", dir.display())));
    }
    let mut names = Vec::new();
    for entry in fs::read_dir(&img)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            names.push(format!("img/{}", entry.file_name().to_string_lossy()));
        }
    }
    names.sort();
    Ok(names)
}

/// Loads one video directory; the directory name becomes the video id.
pub fn load_tracking_video(dir: impl AsRef<Path>) -> Result<VideoAnnotation> {
    let dir = dir.as_ref();
    let video_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| Error::invalid(format!("{} has no directory name", dir.display())))?;
    let wrap = |e: Error| Error::Record { id: video_id.clone(), reason: e.to_string() };
    let frames = frame_list(dir).map_err(wrap)?;
    let gt = fs::read_to_string(dir.join("groundtruth.txt")).map_err(|e| wrap(e.into()))?;
    let boxes = parse_groundtruth(&gt, frames.len()).map_err(wrap)?;
    let label = fs::read_to_string(dir.join("category.txt")).map_err(|e| wrap(e.into()))?;
    let label = label.trim();
    let category_id = if label.eq_ignore_ascii_case("other") {
        None
    } else {
        Some(category_id(label).ok_or_else(|| wrap(Error::invalid(format!("unknown category `{label}`"))))?)
    };
    let video = VideoAnnotation { video_id, frames, boxes, category_id };
    video.validate()?;
    Ok(video)
}

/// Loads every subdirectory of `root`, in name order.
pub fn load_tracking_videos(root: impl AsRef<Path>) -> Result<Vec<VideoAnnotation>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root.as_ref())? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    dirs.iter().map(load_tracking_video).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groundtruth_lines() {
        let text = "0,10,20,30,40\n2\t1\t1\t5\t5\n3,0,0,0,0\n\n";
        let b = parse_groundtruth(text, 4).unwrap();
        assert_eq!(b[0], Some(PixelBox { x: 10.0, y: 20.0, w: 30.0, h: 40.0 }));
        assert_eq!(b[1], None);
        assert!(b[2].is_some());
        assert_eq!(b[3], None);
        assert!(parse_groundtruth("7,1,1,1,1", 4).is_err());
        assert!(parse_groundtruth("0,1,1,1", 4).is_err());
        assert!(parse_groundtruth("0,1,x,1,1", 4).is_err());
    }

    #[test]
    fn directory_ingest() {
        let root = tempfile::tempdir().unwrap();
        let v = root.path().join("Car1");
        fs::create_dir_all(v.join("img")).unwrap();
        for i in 1..=7 {
            fs::write(v.join("img").join(format!("{i:04}.jpg")), b"").unwrap();
        }
        fs::write(v.join("groundtruth.txt"), "0,1,1,4,4\n1,2,2,4,4\n6,3,3,4,4\n").unwrap();
        fs::write(v.join("category.txt"), "car\n").unwrap();

        let o = root.path().join("Blob");
        fs::create_dir_all(&o).unwrap();
        fs::write(o.join("frames.txt"), "a.jpg\nb.jpg\n").unwrap();
        fs::write(o.join("groundtruth.txt"), "0,1,1,1,1\n").unwrap();
        fs::write(o.join("category.txt"), "other").unwrap();

        let vids = load_tracking_videos(root.path()).unwrap();
        assert_eq!(vids.len(), 2);
        assert_eq!(vids[0].video_id, "Blob");
        assert_eq!(vids[0].category_id, None);
        assert_eq!(vids[1].category_id, Some(3));
        assert_eq!(vids[1].frames[0], "img/0001.jpg");
        assert_eq!(vids[1].boxes.iter().filter(|b| b.is_some()).count(), 3);

        fs::write(o.join("category.txt"), "unicorn").unwrap();
        assert!(matches!(load_tracking_video(&o), Err(Error::Record { .. })));
    }
}
