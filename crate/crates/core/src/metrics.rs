//! Trajectory errors, confusion matrices, F1 scores and report files.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::PlayClass;
use crate::segment::{integrate, PlaySegment, Role, OBJECTS};

/// Which objects a trajectory score averages over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleFilter {
    /// Ball and all ten players.
    #[default]
    All,
    /// The ten players.
    Players,
    Offense,
    Defense,
}

impl RoleFilter {
    pub fn includes(self, role: Role) -> bool {
        match self {
            RoleFilter::All => true,
            RoleFilter::Players => role != Role::Ball,
            RoleFilter::Offense => role == Role::Offense,
            RoleFilter::Defense => role == Role::Defense,
        }
    }

    pub fn objects(self) -> Vec<usize> {
        (0..OBJECTS).filter(|&o| self.includes(Role::of_object(o))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryScore {
    pub ade: f64,
    pub fde: f64,
    pub horizon: usize,
    pub filter: RoleFilter,
    pub segments: usize,
}

/// Per-object ADE and FDE for one object's future, from predicted velocities
/// integrated forward from `anchor`.
pub fn object_errors(truth: &[[f64; 2]], velocities: &[[f64; 2]], anchor: [f64; 2], dt: f64) -> Result<(f64, f64)> {
    if truth.len() != velocities.len() || truth.is_empty() {
        return Err(Error::Mismatch(format!(
            "{} true positions against {} predicted velocities",
            truth.len(),
            velocities.len()
        )));
    }
    let pred = integrate(anchor, velocities, dt);
    let errs: Vec<f64> = truth.iter().zip(&pred).map(|(t, p)| crate::frame::distance(*t, *p)).collect();
    let ade = errs.iter().sum::<f64>() / errs.len() as f64;
    Ok((ade, *errs.last().unwrap()))
}

/// ADE and FDE for one segment: averaged over the filtered objects.
///
/// `predicted` uses the segment's `nu` layout, `[object][step][coord]`.
pub fn segment_errors(seg: &PlaySegment, predicted: &[f64], filter: RoleFilter) -> Result<(f64, f64)> {
    if predicted.len() != OBJECTS * seg.horizon * 2 {
        return Err(Error::Mismatch(format!(
            "segment {}: prediction has {} values, expected {}",
            seg.segment_id,
            predicted.len(),
            OBJECTS * seg.horizon * 2
        )));
    }
    let objects = filter.objects();
    let (mut ade, mut fde) = (0.0, 0.0);
    for &o in &objects {
        let truth = seg
            .future_positions(o)
            .ok_or_else(|| Error::Mismatch(format!("segment {} has no future", seg.segment_id)))?;
        let base = o * seg.horizon * 2;
        let vel: Vec<[f64; 2]> = predicted[base..base + seg.horizon * 2]
            .chunks_exact(2)
            .map(|c| [c[0], c[1]])
            .collect();
        let (a, f) = object_errors(&truth, &vel, seg.position(o, seg.steps - 1), seg.dt)?;
        ade += a;
        fde += f;
    }
    Ok((ade / objects.len() as f64, fde / objects.len() as f64))
}

/// Mean of per-segment errors; every segment weighs the same.
pub fn ade_fde(segments: &[PlaySegment], predictions: &[Vec<f64>], filter: RoleFilter) -> Result<TrajectoryScore> {
    if segments.len() != predictions.len() {
        return Err(Error::Mismatch(format!(
            "{} segments against {} predictions",
            segments.len(),
            predictions.len()
        )));
    }
    let horizon = segments.first().map_or(0, |s| s.horizon);
    let (mut ade, mut fde) = (0.0, 0.0);
    for (seg, pred) in segments.iter().zip(predictions) {
        if seg.horizon != horizon {
            return Err(Error::Mismatch("segments disagree on the horizon".into()));
        }
        let (a, f) = segment_errors(seg, pred, filter)?;
        ade += a;
        fde += f;
    }
    let n = segments.len().max(1) as f64;
    Ok(TrajectoryScore {
        ade: ade / n,
        fde: fde / n,
        horizon,
        filter,
        segments: segments.len(),
    })
}

/// `counts[i][j]`: plays with ground truth `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn from_pairs(k: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut m = Self::zeros(k);
        for &(t, p) in pairs {
            if t >= k || p >= k {
                return Err(Error::UnknownClass(format!("class id {} out of {k}", t.max(p))));
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn transposed(&self) -> Self {
        let k = self.k();
        Self {
            counts: (0..k).map(|i| (0..k).map(|j| self.counts[j][i]).collect()).collect(),
        }
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

/// Confusion of labels keyed by segment id; both sides must cover the same ids.
pub fn confusion(truth: &BTreeMap<String, PlayClass>, predicted: &BTreeMap<String, PlayClass>) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() || truth.keys().any(|k| !predicted.contains_key(k)) {
        let missing = truth
            .keys()
            .find(|k| !predicted.contains_key(*k))
            .or_else(|| predicted.keys().find(|k| !truth.contains_key(*k)));
        return Err(Error::Mismatch(format!(
            "truth and prediction cover different segments (first difference: {})",
            missing.map_or("?", |s| s.as_str())
        )));
    }
    let pairs: Vec<(usize, usize)> = truth.iter().map(|(k, t)| (t.index(), predicted[k].index())).collect();
    ConfusionMatrix::from_pairs(PlayClass::K, &pairs)
}

/// One-vs-all scores for one class; `None` where a denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_class: Vec<ClassScore>,
    /// Mean F1 over the classes where it is defined.
    pub macro_f1: Option<f64>,
    /// Set when any score was undefined.
    pub undefined: bool,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn f1_scores(m: &ConfusionMatrix) -> F1Report {
    let per_class: Vec<ClassScore> = (0..m.k())
        .map(|i| {
            let tp = m.counts[i][i];
            let precision = ratio(tp, m.col_sum(i));
            let recall = ratio(tp, m.row_sum(i));
            let f1 = match (precision, recall) {
                (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
                _ => None,
            };
            ClassScore { precision, recall, f1 }
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().filter_map(|c| c.f1).collect();
    let undefined = per_class
        .iter()
        .any(|c| c.precision.is_none() || c.recall.is_none() || c.f1.is_none());
    F1Report {
        macro_f1: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        per_class,
        undefined,
    }
}

/// The JSON report written by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ade: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fde: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub per_class: BTreeMap<String, ClassScore>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    pub fn trajectory(score: &TrajectoryScore) -> Self {
        Self {
            ade: Some(score.ade),
            fde: Some(score.fde),
            per_class: BTreeMap::new(),
            macro_f1: None,
            confusion: Vec::new(),
        }
    }

    pub fn classification(m: &ConfusionMatrix) -> Self {
        let f1 = f1_scores(m);
        Self {
            ade: None,
            fde: None,
            per_class: PlayClass::ALL
                .iter()
                .zip(&f1.per_class)
                .map(|(c, s)| (c.to_string(), *s))
                .collect(),
            macro_f1: f1.macro_f1,
            confusion: m.counts.clone(),
        }
    }
}

/// One exported play embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub segment_id: String,
    pub label: Option<PlayClass>,
    pub values: Vec<f64>,
}

/// Writes `segment_id,label,e0,...` with full float precision.
pub fn write_embeddings_csv<W: Write>(writer: W, rows: &[EmbeddingRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let width = rows.first().map_or(0, |r| r.values.len());
    let mut header = vec!["segment_id".to_string(), "label".to_string()];
    header.extend((0..width).map(|i| format!("e{i}")));
    let csv_err = |e: csv::Error| Error::InvalidArgument(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        if r.values.len() != width {
            return Err(Error::Mismatch(format!("embedding {} has width {}", r.segment_id, r.values.len())));
        }
        let mut rec = vec![r.segment_id.clone(), r.label.map_or(String::new(), |l| l.to_string())];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<embeddings>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// The published weak-label table, printed with predictions as rows.
    const PRINTED: [[u64; 3]; 3] = [[282, 43, 24], [5, 253, 21], [13, 4, 260]];

    fn printed_table() -> ConfusionMatrix {
        ConfusionMatrix {
            counts: PRINTED.iter().map(|r| r.to_vec()).collect(),
        }
        .transposed()
    }

    #[test]
    fn constant_offset() {
        let truth: Vec<[f64; 2]> = (1..=4).map(|s| [s as f64, 0.0]).collect();
        let vel = vec![[1.0 / 0.12, 0.0]; 4];
        let (ade, fde) = object_errors(&truth, &vel, [3.0, 0.0], 0.12).unwrap();
        assert!((ade - 3.0).abs() < 1e-9 && (fde - 3.0).abs() < 1e-9);
    }

    #[test]
    fn linearly_growing_error() {
        let truth = vec![[0.0, 0.0]; 4];
        let vel = vec![[0.5 / 0.12, 0.0]; 4];
        let (ade, fde) = object_errors(&truth, &vel, [0.0, 0.0], 0.12).unwrap();
        assert!((ade - 1.25).abs() < 1e-9);
        assert!((fde - 2.0).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(object_errors(&[[0.0, 0.0]], &[], [0.0, 0.0], 0.1).is_err());
    }

    #[test]
    fn table_reproduced_from_pairs() {
        let mut pairs = Vec::new();
        for (pred, row) in PRINTED.iter().enumerate() {
            for (truth, &n) in row.iter().enumerate() {
                pairs.extend(std::iter::repeat_n((truth, pred), n as usize));
            }
        }
        let m = ConfusionMatrix::from_pairs(3, &pairs).unwrap();
        assert_eq!(m, printed_table());
        assert_eq!(m.total(), 905);
        assert_eq!(m.row_sum(2), 305);
    }

    #[test]
    fn weak_label_table_scores() {
        let f1 = f1_scores(&printed_table());
        let expected = [0.869, 0.874, 0.893];
        for (s, e) in f1.per_class.iter().zip(expected) {
            assert!((s.f1.unwrap() - e).abs() <= 0.001, "{s:?} vs {e}");
        }
        assert!((f1.per_class[2].recall.unwrap() - 260.0 / 305.0).abs() < 1e-12);
        assert!(!f1.undefined);
    }

    #[test]
    fn identity_and_empty() {
        let m = ConfusionMatrix::from_pairs(3, &[(0, 0), (1, 1), (2, 2)]).unwrap();
        assert!(f1_scores(&m).per_class.iter().all(|c| c.f1 == Some(1.0)));
        let empty = ConfusionMatrix::from_pairs(3, &[]).unwrap();
        assert_eq!(empty, ConfusionMatrix::zeros(3));
        let f = f1_scores(&empty);
        assert!(f.undefined && f.macro_f1.is_none());
        assert!(ConfusionMatrix::from_pairs(3, &[(0, 3)]).is_err());
    }

    #[test]
    fn absent_class_is_flagged_not_zero() {
        let m = ConfusionMatrix::from_pairs(3, &[(0, 0), (1, 1)]).unwrap();
        let f = f1_scores(&m);
        assert_eq!(f.per_class[2].f1, None);
        assert!(f.undefined);
        assert_eq!(f.macro_f1, Some(1.0));
    }

    #[test]
    fn keyed_confusion_requires_same_ids() {
        let t: BTreeMap<_, _> = [("a".to_string(), PlayClass::Handoff)].into();
        let p: BTreeMap<_, _> = [("b".to_string(), PlayClass::Handoff)].into();
        assert!(confusion(&t, &p).is_err());
        let m = confusion(&t, &t).unwrap();
        assert_eq!(m.counts[1][1], 1);
    }

    #[test]
    fn report_json_shape() {
        let r = MetricsReport::classification(&printed_table());
        let v = serde_json::to_value(&r).unwrap();
        assert!(v["per_class"]["pick_and_roll"]["f1"].is_number());
        assert_eq!(v["confusion"][2][2], 260);
        assert!(v.get("ade").is_none());
    }

    #[test]
    fn embedding_csv() {
        let rows = vec![
            EmbeddingRow { segment_id: "a".into(), label: Some(PlayClass::Other), values: vec![0.5, -1.0] },
            EmbeddingRow { segment_id: "b".into(), label: None, values: vec![1.0, 2.0] },
        ];
        let mut buf = Vec::new();
        write_embeddings_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "segment_id,label,e0,e1\na,other,0.5,-1\nb,,1,2\n");
    }

    /// Written from the one-vs-all binary counts rather than row/column sums.
    fn oracle_f1(m: &[[u64; 3]; 3], c: usize) -> Option<f64> {
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for (t, row) in m.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                let n = n as f64;
                match (t == c, p == c) {
                    (true, true) => tp += n,
                    (false, true) => fp += n,
                    (true, false) => fn_ += n,
                    _ => {}
                }
            }
        }
        if tp + fp == 0.0 || tp + fn_ == 0.0 || tp == 0.0 {
            return None;
        }
        Some(2.0 * tp / (2.0 * tp + fp + fn_))
    }

    proptest! {
        #[test]
        fn f1_matches_oracle(cells in proptest::array::uniform9(0u64..50)) {
            let m3 = [[cells[0], cells[1], cells[2]], [cells[3], cells[4], cells[5]], [cells[6], cells[7], cells[8]]];
            let m = ConfusionMatrix { counts: m3.iter().map(|r| r.to_vec()).collect() };
            let f = f1_scores(&m);
            for c in 0..3 {
                match (f.per_class[c].f1, oracle_f1(&m3, c)) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                    (None, None) => {}
                    (a, b) => prop_assert!(false, "class {c}: {a:?} vs {b:?}"),
                }
            }
        }

        #[test]
        fn f1_permutation_invariant(cells in proptest::array::uniform9(0u64..50), perm_idx in 0usize..6) {
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let p = perms[perm_idx];
            let m = ConfusionMatrix { counts: cells.chunks(3).map(|r| r.to_vec()).collect() };
            let q = ConfusionMatrix {
                counts: (0..3).map(|i| (0..3).map(|j| m.counts[p[i]][p[j]]).collect()).collect(),
            };
            let (fm, fq) = (f1_scores(&m), f1_scores(&q));
            for i in 0..3 {
                prop_assert_eq!(fq.per_class[i], fm.per_class[p[i]]);
            }
        }

        #[test]
        fn fde_is_last_step_error(offsets in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..12)) {
            let truth = vec![[0.0, 0.0]; offsets.len()];
            let mut prev = [0.0, 0.0];
            let vel: Vec<[f64; 2]> = offsets.iter().map(|&(x, y)| {
                let v = [(x - prev[0]) / 0.1, (y - prev[1]) / 0.1];
                prev = [x, y];
                v
            }).collect();
            let (ade, fde) = object_errors(&truth, &vel, [0.0, 0.0], 0.1).unwrap();
            let errs: Vec<f64> = offsets.iter().map(|&(x, y)| x.hypot(y)).collect();
            prop_assert!((fde - errs.last().unwrap()).abs() < 1e-9);
            prop_assert!(ade <= errs.iter().cloned().fold(0.0, f64::max) + 1e-9);
        }
    }
}
