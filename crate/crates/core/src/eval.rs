//! Confusion matrices, mIoU, trimap boundary/interior mIoU and edge accuracy.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mask::{build_trimap_band, extract_edge_map, BandMap, EdgeMap, LabelMask};

/// `C×C` pixel counts; entry `(g, p)` counts ground truth `g` predicted `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

/// Which side of a trimap band to score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Boundary,
    Interior,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Boundary => "boundary",
            Region::Interior => "interior",
        }
    }

    fn admits(self, in_band: bool) -> bool {
        match self {
            Region::Boundary => in_band,
            Region::Interior => !in_band,
        }
    }
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Shape(format!(
                "cannot merge {}-class and {}-class confusion matrices",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.classes).all(|g| (0..self.classes).all(|p| g == p || self.get(g, p) == 0))
    }
}

/// Accumulates pixels that are non-void in `gt` and, when a band is given,
/// lie in the requested region of it.
pub fn confusion_matrix(
    pred: &LabelMask,
    gt: &LabelMask,
    classes: usize,
    filter: Option<(&BandMap, Region)>,
) -> Result<ConfusionMatrix> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::Shape(format!(
            "prediction {}×{} vs ground truth {}×{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    if let Some((band, _)) = filter {
        if (band.height(), band.width()) != (gt.height(), gt.width()) {
            return Err(Error::Shape("trimap band does not match the masks".into()));
        }
    }
    gt.check_classes(classes)?;
    let mut cm = ConfusionMatrix::new(classes);
    for (px, (&p, &g)) in pred.labels().iter().zip(gt.labels()).enumerate() {
        if gt.is_void_at(px) {
            continue;
        }
        if let Some((band, region)) = filter {
            if !region.admits(band.flags()[px]) {
                continue;
            }
        }
        if p as usize >= classes {
            return Err(Error::InvalidArgument(format!(
                "predicted label {p} at pixel {px} is outside 0..{classes}"
            )));
        }
        cm.counts[g as usize * classes + p as usize] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiouReport {
    /// IoU per class, `None` when the class has zero union.
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

/// Mean IoU over classes with a nonzero union.
pub fn miou(cm: &ConfusionMatrix) -> Result<MiouReport> {
    let c = cm.classes;
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let tp = cm.get(k, k);
            let fn_: u64 = (0..c).map(|p| cm.get(k, p)).sum::<u64>() - tp;
            let fp: u64 = (0..c).map(|g| cm.get(g, k)).sum::<u64>() - tp;
            let union = tp + fp + fn_;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::InvalidArgument(
            "mIoU is undefined: no class is present in prediction or ground truth".into(),
        ));
    }
    let miou = present.iter().sum::<f64>() / present.len() as f64;
    Ok(MiouReport { per_class, miou })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrimapRow {
    pub width: usize,
    /// `None` when the region holds no scored pixel anywhere in the dataset.
    pub boundary: Option<MiouReport>,
    pub interior: Option<MiouReport>,
}

fn report_or_empty(cm: &ConfusionMatrix) -> Result<Option<MiouReport>> {
    if cm.total() == 0 {
        Ok(None)
    } else {
        miou(cm).map(Some)
    }
}

/// Boundary and interior mIoU for each band width, with bands taken from the
/// ground-truth edges and confusion accumulated over the whole dataset.
pub fn trimap_miou(preds: &[LabelMask], gts: &[LabelMask], widths: &[usize], classes: usize) -> Result<Vec<TrimapRow>> {
    if preds.len() != gts.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} ground-truth masks",
            preds.len(),
            gts.len()
        )));
    }
    if widths.contains(&0) {
        return Err(Error::InvalidArgument("trimap widths must be ≥ 1".into()));
    }
    let edges: Vec<EdgeMap> = gts.par_iter().map(extract_edge_map).collect();
    widths
        .iter()
        .map(|&width| {
            let per_image: Vec<(ConfusionMatrix, ConfusionMatrix)> = preds
                .par_iter()
                .zip(gts.par_iter().zip(edges.par_iter()))
                .map(|(p, (g, e))| {
                    let band = build_trimap_band(e, width)?;
                    Ok((
                        confusion_matrix(p, g, classes, Some((&band, Region::Boundary)))?,
                        confusion_matrix(p, g, classes, Some((&band, Region::Interior)))?,
                    ))
                })
                .collect::<Result<_>>()?;
            let mut boundary = ConfusionMatrix::new(classes);
            let mut interior = ConfusionMatrix::new(classes);
            for (b, i) in &per_image {
                boundary.merge(b)?;
                interior.merge(i)?;
            }
            Ok(TrimapRow {
                width,
                boundary: report_or_empty(&boundary)?,
                interior: report_or_empty(&interior)?,
            })
        })
        .collect()
}

/// Confusion over whole images, accumulated across the dataset.
pub fn dataset_confusion(preds: &[LabelMask], gts: &[LabelMask], classes: usize) -> Result<ConfusionMatrix> {
    let parts: Vec<ConfusionMatrix> = preds
        .par_iter()
        .zip(gts.par_iter())
        .map(|(p, g)| confusion_matrix(p, g, classes, None))
        .collect::<Result<_>>()?;
    let mut total = ConfusionMatrix::new(classes);
    for cm in &parts {
        total.merge(cm)?;
    }
    Ok(total)
}

/// Fraction of pixels whose argmax channel (ties → non-edge) matches.
pub fn edge_accuracy(edge_pred: &Grid, gt: &EdgeMap) -> Result<f64> {
    let (c, h, w) = edge_pred.chw()?;
    if c != 2 || (h, w) != (gt.height(), gt.width()) {
        return Err(Error::Shape(format!(
            "edge prediction {:?} vs {}×{} edge map",
            edge_pred.shape(),
            gt.height(),
            gt.width()
        )));
    }
    let hits = edge_pred
        .argmax_channels()?
        .iter()
        .zip(gt.flags())
        .filter(|(&a, &f)| (a == 1) == f)
        .count();
    Ok(hits as f64 / (h * w) as f64)
}

/// Argmax of a `C×H×W` distribution as a label mask.
pub fn prediction_mask(probs: &Grid) -> Result<LabelMask> {
    let (_, h, w) = probs.chw()?;
    let labels = probs.argmax_channels()?.into_iter().map(|c| c as u8).collect();
    LabelMask::new(h, w, labels)
}

fn fmt_iou(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// CSV with header `width,region,iou_0..iou_{C−1},miou`. The whole-image row
/// has region `all` and an empty width; absent classes and empty regions
/// leave their fields empty.
pub fn metrics_csv(overall: &MiouReport, rows: &[TrimapRow], classes: usize) -> String {
    let mut out = String::from("width,region");
    for c in 0..classes {
        let _ = write!(out, ",iou_{c}");
    }
    out.push_str(",miou\n");
    let mut line = |width: String, region: &str, report: Option<&MiouReport>| {
        let _ = write!(out, "{width},{region}");
        for c in 0..classes {
            let _ = write!(out, ",{}", fmt_iou(report.and_then(|r| r.per_class[c])));
        }
        let _ = writeln!(out, ",{}", fmt_iou(report.map(|r| r.miou)));
    };
    line(String::new(), "all", Some(overall));
    for row in rows {
        line(row.width.to_string(), Region::Boundary.as_str(), row.boundary.as_ref());
        line(row.width.to_string(), Region::Interior.as_str(), row.interior.as_ref());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::VOID;

    fn m(h: usize, w: usize, l: &[u8]) -> LabelMask {
        LabelMask::new(h, w, l.to_vec()).unwrap()
    }

    #[test]
    fn hand_case() {
        let gt = m(2, 2, &[0, 0, 1, 1]);
        let pred = m(2, 2, &[0, 1, 1, 1]);
        let cm = confusion_matrix(&pred, &gt, 2, None).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)), (1, 1, 0, 2));
        let r = miou(&cm).unwrap();
        assert_eq!(r.per_class, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((r.miou - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_and_disjoint() {
        let gt = m(1, 4, &[0, 1, 2, 2]);
        let cm = confusion_matrix(&gt, &gt, 3, None).unwrap();
        assert!(cm.is_diagonal());
        assert_eq!(miou(&cm).unwrap().miou, 1.0);
        let swapped = m(1, 4, &[1, 2, 0, 0]);
        assert_eq!(miou(&confusion_matrix(&swapped, &gt, 3, None).unwrap()).unwrap().miou, 0.0);
        assert!(miou(&ConfusionMatrix::new(3)).is_err());
    }

    #[test]
    fn void_excluded_and_regions_partition() {
        let gt = m(3, 3, &[0, 0, 1, 0, VOID, 1, 0, 1, 1]);
        let pred = m(3, 3, &[0, 1, 1, 0, 0, 0, 1, 1, 1]);
        let all = confusion_matrix(&pred, &gt, 2, None).unwrap();
        assert_eq!(all.total(), 8);
        let band = build_trimap_band(&extract_edge_map(&gt), 1).unwrap();
        let mut parts = confusion_matrix(&pred, &gt, 2, Some((&band, Region::Boundary))).unwrap();
        parts.merge(&confusion_matrix(&pred, &gt, 2, Some((&band, Region::Interior))).unwrap()).unwrap();
        assert_eq!(parts, all);
    }

    #[test]
    fn dim_mismatch_rejected() {
        assert!(confusion_matrix(&m(1, 2, &[0, 0]), &m(2, 1, &[0, 0]), 2, None).is_err());
    }

    #[test]
    fn edge_accuracy_cases() {
        let gt = crate::mask::BinaryMap::new(1, 4, vec![true, false, false, true]).unwrap();
        let perfect = Grid::new(vec![2, 1, 4], vec![0.1, 0.9, 0.8, 0.2, 0.9, 0.1, 0.2, 0.8]).unwrap();
        assert_eq!(edge_accuracy(&perfect, &gt).unwrap(), 1.0);
        let uniform = Grid::filled(&[2, 1, 4], 0.5);
        assert_eq!(edge_accuracy(&uniform, &gt).unwrap(), 0.5);
        let partial = Grid::new(vec![2, 1, 4], vec![0.1, 0.9, 0.1, 0.2, 0.9, 0.1, 0.9, 0.8]).unwrap();
        let complement = partial.map(|v| 1.0 - v);
        let a = edge_accuracy(&partial, &gt).unwrap();
        assert_eq!(edge_accuracy(&complement, &gt).unwrap(), 1.0 - a);
    }

    #[test]
    fn csv_layout() {
        let gt = m(2, 2, &[0, 0, 1, 1]);
        let cm = confusion_matrix(&gt, &gt, 3, None).unwrap();
        let rows = trimap_miou(&[gt.clone()], &[gt], &[1], 3).unwrap();
        let csv = metrics_csv(&miou(&cm).unwrap(), &rows, 3);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "width,region,iou_0,iou_1,iou_2,miou");
        assert_eq!(lines[1], ",all,1.000000,1.000000,,1.000000");
        assert_eq!(lines[2], "1,boundary,1.000000,1.000000,,1.000000");
        assert_eq!(lines[3], "1,interior,,,,");
    }
}
