//! Clip files (JSON and NTU `.skeleton` text) and dataset directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::clip::{Dataset, SkeletonClip, Split};
use super::topology::SkeletonTopology;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipFormat {
    Json,
    Ntu,
}

impl std::str::FromStr for ClipFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ClipFormat::Json),
            "ntu" => Ok(ClipFormat::Ntu),
            other => Err(Error::invalid(format!("unknown clip format {other:?}"))),
        }
    }
}

impl ClipFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ClipFormat::Json => "json",
            ClipFormat::Ntu => "skeleton",
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClipFile {
    topology: SkeletonTopology,
    label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subject: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    camera: Option<u32>,
    frames: Vec<Vec<[f64; 3]>>,
}

pub fn read_clip(path: &Path, format: ClipFormat) -> Result<SkeletonClip> {
    let text = fs::read_to_string(path)?;
    match format {
        ClipFormat::Json => parse_json_clip(&text, path),
        ClipFormat::Ntu => parse_ntu_clip(&text, path),
    }
}

pub fn parse_json_clip(text: &str, path: &Path) -> Result<SkeletonClip> {
    let file: ClipFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let v = file.topology.joint_count();
    let t = file.frames.len();
    let mut data = Vec::with_capacity(t * v * 3);
    for (i, frame) in file.frames.iter().enumerate() {
        if frame.len() != v {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("frame {i} has {} joints, topology has {v}", frame.len()),
            });
        }
        data.extend(frame.iter().flatten());
    }
    if t == 0 {
        return Err(Error::EmptyClip(path.to_path_buf()));
    }
    let positions = Tensor::new(vec![t, v, 3], data)?;
    let mut clip = SkeletonClip::new(Arc::new(file.topology), positions, file.label)?;
    clip.subject_id = file.subject;
    clip.camera_id = file.camera;
    Ok(clip)
}

pub fn clip_to_json(clip: &SkeletonClip) -> Result<String> {
    let (t_len, v) = (clip.frames(), clip.joints());
    let frames = (0..t_len)
        .map(|t| (0..v).map(|j| clip.joint(t, j)).collect())
        .collect();
    let file = ClipFile {
        topology: (*clip.topology).clone(),
        label: clip.label,
        subject: clip.subject_id,
        camera: clip.camera_id,
        frames,
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn write_clip_file(path: &Path, clip: &SkeletonClip) -> Result<()> {
    fs::write(path, clip_to_json(clip)?)?;
    Ok(())
}

/// Reads the Kinect v2 text layout: frame count, then per frame a body count
/// and per body an info line, a joint count and one 12-value line per joint
/// (x, y, z first). Only the first body is kept; frames without bodies are
/// dropped. A single remaining frame is held for two frames.
pub fn parse_ntu_clip(text: &str, path: &Path) -> Result<SkeletonClip> {
    let mut lines = NumberedLines::new(text, path);
    let frame_count: usize = lines.next_value("frame count")?;
    let topology = Arc::new(SkeletonTopology::ntu25());
    let v = topology.joint_count();
    let mut data = Vec::new();
    let mut kept = 0usize;
    for _ in 0..frame_count {
        let bodies: usize = lines.next_value("body count")?;
        for b in 0..bodies {
            lines.next_line("body info")?;
            let (joint_line, joints): (usize, usize) = {
                let n = lines.next_value("joint count")?;
                (lines.line, n)
            };
            if joints != v {
                return Err(
                    lines.error_at(joint_line, format!("expected {v} joints, found {joints}"))
                );
            }
            for _ in 0..joints {
                let (line_no, line) = lines.next_line("joint")?;
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != 12 {
                    return Err(lines.error_at(
                        line_no,
                        format!("expected 12 joint values, found {}", fields.len()),
                    ));
                }
                let mut xyz = [0.0; 3];
                for (k, f) in fields.iter().enumerate() {
                    let val: f64 = f
                        .parse()
                        .map_err(|_| lines.error_at(line_no, format!("bad number {f:?}")))?;
                    if k < 3 {
                        if !val.is_finite() {
                            return Err(lines.error_at(line_no, "non-finite coordinate".into()));
                        }
                        xyz[k] = val;
                    }
                }
                if b == 0 {
                    data.extend_from_slice(&xyz);
                }
            }
        }
        if bodies > 0 {
            kept += 1;
        }
    }
    lines.expect_end()?;
    if kept == 0 {
        return Err(Error::EmptyClip(path.to_path_buf()));
    }
    if kept == 1 {
        data.extend_from_within(..);
        kept = 2;
    }
    let positions = Tensor::new(vec![kept, v, 3], data)?;
    let mut clip = SkeletonClip::new(topology, positions, None)?;
    if let Some(meta) = path
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(parse_ntu_name)
    {
        clip.label = Some(meta.action - 1);
        clip.subject_id = Some(meta.performer);
        clip.camera_id = Some(meta.camera);
    }
    Ok(clip)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NtuName {
    pub setup: u32,
    pub camera: u32,
    pub performer: u32,
    pub replication: u32,
    pub action: usize,
}

/// `SsssCcccPpppRrrrAaaa.skeleton`
pub fn parse_ntu_name(name: &str) -> Option<NtuName> {
    let stem = name.strip_suffix(".skeleton").unwrap_or(name);
    let bytes = stem.as_bytes();
    if bytes.len() != 20 {
        return None;
    }
    let field = |i: usize, tag: u8| -> Option<u32> {
        let chunk = &stem[i * 4..i * 4 + 4];
        (chunk.as_bytes()[0] == tag)
            .then(|| chunk[1..].parse().ok())
            .flatten()
    };
    let action = field(4, b'A')? as usize;
    if action == 0 {
        return None;
    }
    Some(NtuName {
        setup: field(0, b'S')?,
        camera: field(1, b'C')?,
        performer: field(2, b'P')?,
        replication: field(3, b'R')?,
        action,
    })
}

struct NumberedLines<'a> {
    iter: std::str::Lines<'a>,
    line: usize,
    path: &'a Path,
}

impl<'a> NumberedLines<'a> {
    fn new(text: &'a str, path: &'a Path) -> Self {
        NumberedLines {
            iter: text.lines(),
            line: 0,
            path,
        }
    }

    fn error_at(&self, line: usize, message: String) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message,
        }
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        loop {
            match self.iter.next() {
                Some(l) => {
                    self.line += 1;
                    if !l.trim().is_empty() {
                        return Ok((self.line, l));
                    }
                }
                None => {
                    return Err(self.error_at(
                        self.line + 1,
                        format!("unexpected end of file, expected {what}"),
                    ))
                }
            }
        }
    }

    fn next_value<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let (n, l) = self.next_line(what)?;
        l.trim()
            .parse()
            .map_err(|_| self.error_at(n, format!("expected {what}, found {:?}", l.trim())))
    }

    fn expect_end(&mut self) -> Result<()> {
        for l in self.iter.by_ref() {
            self.line += 1;
            if !l.trim().is_empty() {
                return Err(self.error_at(self.line, "trailing content after last frame".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: Option<usize>,
    pub split: Split,
}

pub fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    for e in entries {
        w.serialize(e).map_err(|err| csv_error(&path, err))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST_FILE);
    let mut r = csv::Reader::from_path(&path).map_err(|e| csv_error(&path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<ManifestEntry>, _>>()
        .map_err(|e| csv_error(&path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Writes every clip as `clip_XXXXX.json` plus the manifest.
pub fn write_dataset_dir(dir: &Path, sets: &[&Dataset]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    let mut written = Vec::new();
    let mut n = 0;
    for set in sets {
        for clip in &set.clips {
            let name = format!("clip_{n:05}.json");
            write_clip_file(&dir.join(&name), clip)?;
            written.push(dir.join(&name));
            entries.push(ManifestEntry {
                path: name,
                label: clip.label,
                split: set.split,
            });
            n += 1;
        }
    }
    write_manifest(dir, &entries)?;
    Ok(written)
}

/// Loads a manifest directory into (train, val) datasets.
pub fn load_dataset_dir(dir: &Path, class_count: usize) -> Result<(Dataset, Dataset)> {
    let entries = read_manifest(dir)?;
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for e in &entries {
        let path = dir.join(&e.path);
        let format = if e.path.ends_with(".skeleton") {
            ClipFormat::Ntu
        } else {
            ClipFormat::Json
        };
        let mut clip = read_clip(&path, format)?;
        if e.label.is_some() {
            clip.label = e.label;
        }
        match e.split {
            Split::Train => train.push(clip),
            Split::Val => val.push(clip),
        }
    }
    Ok((
        Dataset::new(train, class_count, Split::Train)?,
        Dataset::new(val, class_count, Split::Val)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ntu_fixture(frames: usize, bodies: usize) -> String {
        let mut s = format!("{frames}\n");
        for f in 0..frames {
            s.push_str(&format!("{bodies}\n"));
            for b in 0..bodies {
                s.push_str("72057594037931101 0 1 1 1 1 0 0.02 0.18 2\n25\n");
                for j in 0..25 {
                    let (x, y, z) = if j == 0 {
                        (1.0 + f as f64, 2.0 + b as f64, 3.0)
                    } else {
                        (0.01 * j as f64, -0.5, 3.5)
                    };
                    s.push_str(&format!(
                        "{x} {y} {z} 277.2 191.7 1036.4 513.1 0.19 -0.05 0.97 -0.02 2\n"
                    ));
                }
            }
        }
        s
    }

    #[test]
    fn ntu_single_frame_fixture() {
        let clip = parse_ntu_clip(&ntu_fixture(1, 1), Path::new("x.skeleton")).unwrap();
        assert_eq!(clip.joint(0, 0), [1.0, 2.0, 3.0]);
        assert_eq!(clip.frames(), 2);
        assert_eq!(clip.joint(1, 0), [1.0, 2.0, 3.0]);
    }

    #[test]
    fn ntu_keeps_first_body_and_drops_empty_frames() {
        let mut text = ntu_fixture(3, 2);
        text = text.replacen("3\n", "4\n", 1);
        text.push_str("0\n");
        let clip = parse_ntu_clip(&text, Path::new("x.skeleton")).unwrap();
        assert_eq!(clip.frames(), 3);
        assert_eq!(clip.joint(2, 0), [3.0, 2.0, 3.0]);
    }

    #[test]
    fn ntu_truncated_is_a_parse_error() {
        let text = ntu_fixture(2, 1);
        let cut: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
        let err = parse_ntu_clip(&cut, Path::new("x.skeleton")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 21, .. }), "{err}");
    }

    #[test]
    fn ntu_bad_value_reports_line() {
        let text = ntu_fixture(1, 1).replacen("0.19", "zz", 1);
        match parse_ntu_clip(&text, Path::new("x.skeleton")).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 5),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn ntu_all_empty_frames() {
        let err = parse_ntu_clip("2\n0\n0\n", Path::new("x.skeleton")).unwrap_err();
        assert!(matches!(err, Error::EmptyClip(_)));
    }

    #[test]
    fn ntu_filename_metadata() {
        let m = parse_ntu_name("S001C002P003R002A013.skeleton").unwrap();
        assert_eq!((m.camera, m.performer, m.action), (2, 3, 13));
        assert!(parse_ntu_name("clip.skeleton").is_none());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let topo = SkeletonTopology::new(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec![-1, 0, 1, 1],
            0,
            1,
            2,
            3,
        )
        .unwrap();
        let data: Vec<f64> = (0..24).map(|i| (i as f64 * 0.1).sin() / 3.0).collect();
        let clip = SkeletonClip::new(
            Arc::new(topo),
            Tensor::new(vec![2, 4, 3], data).unwrap(),
            Some(3),
        )
        .unwrap();
        let text = clip_to_json(&clip).unwrap();
        let back = parse_json_clip(&text, Path::new("c.json")).unwrap();
        assert_eq!(back, clip);
        assert_eq!(clip_to_json(&back).unwrap(), text);
    }

    #[test]
    fn json_label_null_and_unknown_keys() {
        let topo = r#"{"names":["a","b","c","d"],"parent":[-1,0,1,1],"center":0,"chest":1,"lshoulder":2,"rshoulder":3}"#;
        let frame = "[[0,0,0],[0,1,0],[1,1,0],[-1,1,0]]";
        let ok = format!(r#"{{"topology":{topo},"label":null,"frames":[{frame},{frame}]}}"#);
        assert_eq!(parse_json_clip(&ok, Path::new("a")).unwrap().label, None);
        let bad =
            format!(r#"{{"topology":{topo},"label":null,"extra":1,"frames":[{frame},{frame}]}}"#);
        assert!(matches!(
            parse_json_clip(&bad, Path::new("a")),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![
            ManifestEntry {
                path: "a.json".into(),
                label: Some(2),
                split: Split::Train,
            },
            ManifestEntry {
                path: "b.json".into(),
                label: None,
                split: Split::Val,
            },
        ];
        write_manifest(dir.path(), &entries).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), entries);
    }
}
