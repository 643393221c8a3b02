//! Dataset directories: a plain-text pose manifest plus one binary PPM per frame.
//!
//! `manifest.txt` starts with `CPSD 1 <n>` and then lists one frame per line:
//! `<file> tx ty tz qw qx qy qz [camera_tag]`, floats in shortest round-trip
//! form. Frames are `frame_%06d.ppm` (P6, maxval 255). An optional `meta.txt`
//! records the provenance as `key = value` lines.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Dataset, DatasetMeta, Image, PoseSample};
use crate::error::{Error, Result};
use crate::pose::Pose;

pub const MANIFEST_FILE: &str = "manifest.txt";
const META_FILE: &str = "meta.txt";
const MANIFEST_MAGIC: &str = "CPSD";
const MANIFEST_VERSION: u32 = 1;

/// Encodes a 3-channel image as binary PPM.
pub fn write_ppm(image: &Image) -> Result<Vec<u8>> {
    let [c, h, w] = image.shape();
    if c != 3 {
        return Err(Error::shape(
            "ppm",
            format!("PPM frames need 3 channels, got {c}"),
        ));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let src = image.bytes();
    out.reserve(3 * plane);
    for i in 0..plane {
        out.extend_from_slice(&[src[i], src[plane + i], src[2 * plane + i]]);
    }
    Ok(out)
}

/// Decodes a binary PPM with maxval 255; `frame` names the file in errors.
pub fn read_ppm(bytes: &[u8], frame: &str) -> Result<Image> {
    let fail = |reason: String| Error::FrameDecode {
        frame: frame.to_string(),
        reason,
    };
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(fail("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(fail(format!("expected magic P6, found `{}`", fields[0])));
    }
    let number = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| fail(format!("bad {what} `{s}`")))
    };
    let width = number(&fields[1], "width")?;
    let height = number(&fields[2], "height")?;
    let maxval = number(&fields[3], "maxval")?;
    if maxval != 255 {
        return Err(fail(format!("maxval {maxval} is not 255")));
    }
    if width == 0 || height == 0 {
        return Err(fail(format!("empty image {width}x{height}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let plane = width * height;
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != 3 * plane {
        return Err(fail(format!(
            "raster holds {} bytes, expected {}",
            raster.len(),
            3 * plane
        )));
    }
    let mut data = vec![0u8; 3 * plane];
    for (i, px) in raster.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c];
        }
    }
    Image::new(3, height, width, data)
}

fn frame_file(index: u64) -> String {
    format!("frame_{index:06}.ppm")
}

/// Writes `ds` into `dir`, creating it if needed.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = format!("{MANIFEST_MAGIC} {MANIFEST_VERSION} {}\n", ds.len());
    let mut previous = None;
    for s in &ds.samples {
        if previous.is_some_and(|p| s.frame_index <= p) {
            return Err(Error::FrameMismatch(format!(
                "frame index {} does not increase",
                s.frame_index
            )));
        }
        previous = Some(s.frame_index);
        let name = frame_file(s.frame_index);
        fs::write(dir.join(&name), write_ppm(&s.image)?)?;
        manifest.push_str(&name);
        for v in s.pose.to_raw() {
            manifest.push_str(&format!(" {v}"));
        }
        if let Some(tag) = &s.camera_tag {
            if tag.is_empty() || tag.contains(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!(
                    "camera tag `{tag}` must be one word"
                )));
            }
            manifest.push(' ');
            manifest.push_str(tag);
        }
        manifest.push('\n');
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;

    let mut meta = fs::File::create(dir.join(META_FILE))?;
    writeln!(meta, "source = {}", ds.meta.source)?;
    if let Some(seed) = ds.meta.seed {
        writeln!(meta, "seed = {seed}")?;
    }
    writeln!(meta, "lineage = {}", ds.meta.lineage.join(" "))?;
    Ok(())
}

fn parse_meta(text: &str) -> DatasetMeta {
    let mut meta = DatasetMeta::default();
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let value = value.trim();
        match key.trim() {
            "source" => meta.source = value.to_string(),
            "seed" => meta.seed = value.parse().ok(),
            "lineage" => meta.lineage = value.split_whitespace().map(String::from).collect(),
            _ => {}
        }
    }
    meta
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(Error::MissingManifest(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&manifest_path)?;
    let bad = |reason: String| Error::format(&manifest_path, reason);
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .unwrap_or_default()
        .split_whitespace()
        .collect();
    let n_frames = match header.as_slice() {
        [MANIFEST_MAGIC, version, n] => {
            if version.parse::<u32>() != Ok(MANIFEST_VERSION) {
                return Err(bad(format!("unsupported manifest version `{version}`")));
            }
            n.parse::<usize>()
                .map_err(|_| bad(format!("bad frame count `{n}`")))?
        }
        _ => {
            return Err(bad(format!(
                "expected header `{MANIFEST_MAGIC} {MANIFEST_VERSION} <n>`"
            )))
        }
    };
    let entries: Vec<&str> = lines.collect();
    if entries.len() != n_frames {
        return Err(bad(format!(
            "header announces {n_frames} frames but {} are listed",
            entries.len()
        )));
    }
    let on_disk = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| {
            let name = e.file_name();
            let name = name.to_string_lossy();
            name.starts_with("frame_") && name.ends_with(".ppm")
        })
        .count();
    if on_disk != n_frames {
        return Err(bad(format!(
            "manifest lists {n_frames} frames but the directory holds {on_disk}"
        )));
    }

    let mut samples = Vec::with_capacity(n_frames);
    for (line_no, line) in entries.iter().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(8..=9).contains(&fields.len()) {
            return Err(bad(format!("line {}: expected 8 or 9 fields", line_no + 2)));
        }
        let name = fields[0];
        let mut raw = [0.0; 7];
        for (slot, field) in raw.iter_mut().zip(&fields[1..8]) {
            *slot = field
                .parse()
                .map_err(|_| bad(format!("line {}: bad number `{field}`", line_no + 2)))?;
        }
        let frame_index = name
            .strip_prefix("frame_")
            .and_then(|s| s.strip_suffix(".ppm"))
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| bad(format!("line {}: bad frame name `{name}`", line_no + 2)))?;
        if samples
            .last()
            .is_some_and(|p: &PoseSample| frame_index <= p.frame_index)
        {
            return Err(bad(format!("frame indices do not increase at `{name}`")));
        }
        let bytes = fs::read(dir.join(name)).map_err(|e| Error::FrameDecode {
            frame: name.to_string(),
            reason: e.to_string(),
        })?;
        let image = read_ppm(&bytes, name)?;
        let pose = Pose::from_stored(&raw);
        samples.push(PoseSample {
            image,
            pose,
            frame_index,
            camera_tag: fields.get(8).map(|s| s.to_string()),
        });
    }
    let meta = match fs::read_to_string(dir.join(META_FILE)) {
        Ok(text) => parse_meta(&text),
        Err(_) => DatasetMeta {
            source: dir.display().to_string(),
            ..Default::default()
        },
    };
    Ok(Dataset::new(samples, meta))
}
