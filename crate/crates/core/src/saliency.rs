//! Input-gradient heat maps of the selected discriminative segments.

use std::ops::{Range, RangeInclusive};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::heads::{segment_and_pool_backward, segment_bounds};
use crate::model::Model;
use crate::nn::{Mode, Tensor};
use crate::skeleton::io::csv_error;
use crate::skeleton::SkeletonClip;

/// Heat maps for one clip, one entry per selected segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMaps {
    pub selected: Vec<usize>,
    /// Backbone output frames of each selected segment.
    pub segment_frames: Vec<Range<usize>>,
    /// Input frames that can influence each selected segment.
    pub receptive_fields: Vec<RangeInclusive<usize>>,
    /// `|∂ segment sum / ∂ input|` averaged over joints and coordinates, per input frame.
    pub curves: Vec<Vec<f64>>,
    /// The same magnitudes averaged over coordinates and the receptive field, per joint.
    pub joint_maps: Vec<Vec<f64>>,
}

/// Back-propagates the summed activations of every selected segment
/// feature to the prepared network input.
pub fn compute_saliency(model: &mut Model, clip: &SkeletonClip) -> Result<SaliencyMaps> {
    model.set_mode(Mode::Eval);
    let x = model.batch_tensor(&[clip])?;
    let (t, v) = (x.dim(2), x.dim(3));
    let out = model.forward(&x, None)?;
    let feature_shape = model
        .backbone()
        .activations()
        .last()
        .map(|a| a.shape().to_vec())
        .ok_or_else(|| Error::invalid("backbone produced no activations"))?;
    let (c, t_out) = (feature_shape[1], feature_shape[2]);
    let n = model.config().segments;
    let bounds = segment_bounds(t_out, n)?;
    let backbone_cfg = model.config().backbone.clone();

    let mut maps = SaliencyMaps {
        selected: out.selected[0].clone(),
        segment_frames: Vec::new(),
        receptive_fields: Vec::new(),
        curves: Vec::new(),
        joint_maps: Vec::new(),
    };
    for &seg in &out.selected[0] {
        let mut seed = Tensor::zeros(&[1, n, c]);
        for ci in 0..c {
            seed.set(&[0, seg, ci], 1.0);
        }
        let df = segment_and_pool_backward(&seed, &feature_shape)?;
        let g = model.backward_features(&df)?;
        let r = bounds[seg].clone();
        let rf = *backbone_cfg.receptive_field(r.start, t).start()
            ..=*backbone_cfg.receptive_field(r.end - 1, t).end();
        let mag = |ti: usize, vi: usize| {
            (0..3).map(|ci| g.get(&[0, ci, ti, vi]).abs()).sum::<f64>() / 3.0
        };
        let curve = (0..t)
            .map(|ti| (0..v).map(|vi| mag(ti, vi)).sum::<f64>() / v as f64)
            .collect();
        let span = rf.end() - rf.start() + 1;
        let joints = (0..v)
            .map(|vi| rf.clone().map(|ti| mag(ti, vi)).sum::<f64>() / span as f64)
            .collect();
        maps.segment_frames.push(r);
        maps.receptive_fields.push(rf);
        maps.curves.push(curve);
        maps.joint_maps.push(joints);
    }
    Ok(maps)
}

/// Writes `index,slot0,slot1,…` with one row per frame or joint.
pub fn write_columns_csv(path: &Path, index: &str, columns: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec![index.to_string()];
    header.extend((0..columns.len()).map(|m| format!("slot{m}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    let rows = columns.first().map_or(0, Vec::len);
    for i in 0..rows {
        let mut rec = vec![i.to_string()];
        rec.extend(columns.iter().map(|col| col[i].to_string()));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a binary grayscale PGM with one `row_height`-pixel band per row
/// of `rows`, scaled so the largest value is white.
pub fn write_pgm(path: &Path, rows: &[Vec<f64>], row_height: usize) -> Result<()> {
    let width = rows.first().map_or(0, Vec::len);
    if width == 0 || rows.iter().any(|r| r.len() != width) || row_height == 0 {
        return Err(Error::invalid("heat map image needs equal, non-empty rows"));
    }
    let max = rows.iter().flatten().fold(0.0f64, |m, &x| m.max(x));
    let mut pixels = Vec::with_capacity(width * rows.len() * row_height);
    for row in rows {
        let line: Vec<u8> = row
            .iter()
            .map(|&x| {
                if max > 0.0 {
                    (255.0 * x / max).round() as u8
                } else {
                    0
                }
            })
            .collect();
        for _ in 0..row_height {
            pixels.extend_from_slice(&line);
        }
    }
    let file = std::fs::File::create(path)?;
    PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(
            &pixels,
            width as u32,
            (rows.len() * row_height) as u32,
            ExtendedColorType::L8,
        )
        .map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// Writes `curves.csv`, `joints.csv`, `curves.pgm` and `joints.pgm` under `dir`.
pub fn write_saliency(dir: &Path, maps: &SaliencyMaps) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_columns_csv(&dir.join("curves.csv"), "frame", &maps.curves)?;
    write_columns_csv(&dir.join("joints.csv"), "joint", &maps.joint_maps)?;
    write_pgm(&dir.join("curves.pgm"), &maps.curves, 8)?;
    write_pgm(&dir.join("joints.pgm"), &maps.joint_maps, 8)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::model::ModelConfig;
    use crate::skeleton::synthetic::synthesize_clip;
    use crate::skeleton::SkeletonTopology;
    use std::sync::Arc;

    fn setup() -> (Model, SkeletonClip) {
        let mut cfg = ModelConfig::new(4);
        cfg.backbone = BackboneConfig::from_channels(3, &[(4, 1), (4, 2)]);
        cfg.frames = 40;
        let clip = synthesize_clip(&Arc::new(SkeletonTopology::ntu25()), 1, 40, 3).unwrap();
        (Model::new(cfg, 4).unwrap(), clip)
    }

    #[test]
    fn heat_curves_peak_inside_receptive_field() {
        let (mut model, clip) = setup();
        let maps = compute_saliency(&mut model, &clip).unwrap();
        assert_eq!(maps.curves.len(), 3);
        for (curve, rf) in maps.curves.iter().zip(&maps.receptive_fields) {
            assert!(curve.iter().all(|&h| h >= 0.0));
            let peak = (0..curve.len())
                .max_by(|&a, &b| curve[a].total_cmp(&curve[b]))
                .unwrap();
            assert!(rf.contains(&peak), "peak {peak} outside {rf:?}");
            for (t, &h) in curve.iter().enumerate() {
                if !rf.contains(&t) {
                    assert_eq!(h, 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_maps() {
        let (mut model, clip) = setup();
        model.visit_states(&mut |_, s| s.params.values_mut().for_each(|p| p.fill(0.0)));
        let maps = compute_saliency(&mut model, &clip).unwrap();
        assert!(maps.curves.iter().flatten().all(|&h| h == 0.0));
        assert!(maps.joint_maps.iter().flatten().all(|&h| h == 0.0));
    }

    #[test]
    fn writes_csv_and_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let maps = SaliencyMaps {
            selected: vec![0],
            segment_frames: vec![0..2],
            receptive_fields: vec![0..=3],
            curves: vec![vec![0.0, 0.5, 1.0, 0.25]],
            joint_maps: vec![vec![1.0, 2.0]],
        };
        write_saliency(dir.path(), &maps).unwrap();
        let pgm = std::fs::read(dir.path().join("curves.pgm")).unwrap();
        assert!(pgm.starts_with(b"P5"));
        assert_eq!(&pgm[pgm.len() - 4..], &[0, 128, 255, 64]);
        let csv = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
        assert_eq!(csv.lines().next(), Some("frame,slot0"));
    }
}
