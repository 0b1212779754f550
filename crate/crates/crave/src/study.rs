//! Subjective-study processing: per-annotator z-score normalisation,
//! BT.500-style observer screening and per-video MOS aggregation.
//!
//! Tables are videos x annotators with an explicit missing mask, so screening
//! can drop an observer without touching surviving scores.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StudyError {
    #[error("annotation table is empty")]
    EmptyTable,
    #[error("annotator {0} has zero score deviation (or fewer than 2 scores)")]
    DegenerateAnnotator(String),
    #[error("screening requires at least 2 annotators, got {0}")]
    TooFewAnnotators(usize),
    #[error("screening rejected every annotator; the table looks corrupt")]
    AllRejected,
    #[error("video {0} has no surviving scores")]
    OrphanVideo(String),
    #[error("raw score {value} at video {video}, annotator {annotator} outside [1, 10]")]
    ScoreOutOfRange { video: String, annotator: String, value: f64 },
    #[error("table parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for StudyError {
    fn from(e: std::io::Error) -> Self {
        StudyError::Io(e.to_string())
    }
}

/// Whether scores are in raw 10-point units or z-scored units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Raw,
    ZScored,
}

/// Opinion scores for M videos by I annotators. `missing[m][i]` marks a cell
/// with no usable score.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationTable {
    pub video_ids: Vec<String>,
    pub annotator_ids: Vec<String>,
    pub scores: Array2<f64>,
    pub missing: Array2<bool>,
    pub kind: ScoreKind,
}

impl AnnotationTable {
    pub fn new(
        video_ids: Vec<String>,
        annotator_ids: Vec<String>,
        scores: Array2<f64>,
        missing: Array2<bool>,
        kind: ScoreKind,
    ) -> Result<Self, StudyError> {
        let t = AnnotationTable { video_ids, annotator_ids, scores, missing, kind };
        t.validate()?;
        Ok(t)
    }

    /// Complete table (no missing cells) from row-major data.
    pub fn from_rows(
        video_ids: Vec<String>,
        annotator_ids: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self, StudyError> {
        let m = video_ids.len();
        let i = annotator_ids.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let scores = Array2::from_shape_vec((m, i), flat)
            .map_err(|_| StudyError::Parse { line: 0, message: "ragged rows".into() })?;
        let missing = Array2::from_elem((m, i), false);
        Self::new(video_ids, annotator_ids, scores, missing, ScoreKind::Raw)
    }

    fn validate(&self) -> Result<(), StudyError> {
        let (m, i) = self.scores.dim();
        if m == 0 || i == 0 {
            return Err(StudyError::EmptyTable);
        }
        assert_eq!(self.video_ids.len(), m, "video id count must match rows");
        assert_eq!(self.annotator_ids.len(), i, "annotator id count must match columns");
        assert_eq!(self.missing.dim(), (m, i), "mask shape must match scores");
        for mi in 0..m {
            for ii in 0..i {
                if self.missing[(mi, ii)] {
                    continue;
                }
                let v = self.scores[(mi, ii)];
                if !v.is_finite() {
                    return Err(StudyError::Parse {
                        line: mi + 2,
                        message: format!("non-finite score for {}", self.video_ids[mi]),
                    });
                }
                if self.kind == ScoreKind::Raw && !(1.0..=10.0).contains(&v) {
                    return Err(StudyError::ScoreOutOfRange {
                        video: self.video_ids[mi].clone(),
                        annotator: self.annotator_ids[ii].clone(),
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn n_videos(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n_annotators(&self) -> usize {
        self.scores.ncols()
    }

    fn column_present(&self, col: usize) -> Vec<f64> {
        (0..self.n_videos())
            .filter(|&m| !self.missing[(m, col)])
            .map(|m| self.scores[(m, col)])
            .collect()
    }

    /// Annotator columns with at least one usable score.
    fn live_columns(&self) -> Vec<usize> {
        (0..self.n_annotators())
            .filter(|&c| (0..self.n_videos()).any(|m| !self.missing[(m, c)]))
            .collect()
    }
}

/// Observer-rejection thresholds: `ratio1` is the exceedance-frequency gate
/// `(P+Q)/M`, `ratio2` the one-sidedness gate `|P-Q|/(P+Q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreeningConfig {
    pub r1: f64,
    pub r2: f64,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        ScreeningConfig { r1: 0.05, r2: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatorStats {
    pub annotator_id: String,
    pub p: usize,
    pub q: usize,
    pub ratio1: f64,
    pub ratio2: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningReport {
    pub rejected_annotators: Vec<String>,
    pub per_annotator: Vec<AnnotatorStats>,
    /// Kurtosis beta2 per video over all present scores; 0 marks a
    /// zero-variance row (beta2 >= 1 whenever defined).
    pub kurtosis_per_video: Vec<f64>,
}

impl ScreeningReport {
    /// Structured text form: header fields, one stats row per annotator,
    /// then per-video kurtosis rows.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "rejected\t{}", self.rejected_annotators.join(","));
        let _ = writeln!(s, "# annotator\tP\tQ\tratio1\tratio2\trejected");
        for st in &self.per_annotator {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                st.annotator_id, st.p, st.q, st.ratio1, st.ratio2, st.rejected
            );
        }
        let _ = writeln!(s, "# video\tkurtosis");
        for (i, k) in self.kurtosis_per_video.iter().enumerate() {
            let _ = writeln!(s, "video_{i}\t{k}");
        }
        s
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }
}

/// Screened, aggregated per-video scores in z-units.
#[derive(Debug, Clone, PartialEq)]
pub struct MosVector {
    pub video_ids: Vec<String>,
    pub mos: Vec<f64>,
    pub support_counts: Vec<usize>,
}

impl MosVector {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("video_id\tmos\tsupport\n");
        for i in 0..self.video_ids.len() {
            let _ = writeln!(s, "{}\t{}\t{}", self.video_ids[i], self.mos[i], self.support_counts[i]);
        }
        s
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population central moments (m2, m4).
fn central_moments(values: &[f64]) -> (f64, f64) {
    let mu = mean(values);
    let n = values.len() as f64;
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for v in values {
        let d = v - mu;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    (m2 / n, m4 / n)
}

/// Per-annotator standardisation: each column is centred on its own mean and
/// divided by its population standard deviation, over that annotator's
/// non-missing scores. Fully masked columns pass through untouched.
pub fn zscore_normalize(raw: &AnnotationTable) -> Result<AnnotationTable, StudyError> {
    raw.validate()?;
    let mut scores = raw.scores.clone();
    for col in 0..raw.n_annotators() {
        let values = raw.column_present(col);
        if values.is_empty() {
            continue;
        }
        if values.len() < 2 {
            return Err(StudyError::DegenerateAnnotator(raw.annotator_ids[col].clone()));
        }
        let mu = mean(&values);
        let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / values.len() as f64;
        if var == 0.0 {
            return Err(StudyError::DegenerateAnnotator(raw.annotator_ids[col].clone()));
        }
        let sigma = var.sqrt();
        for row in 0..raw.n_videos() {
            if !raw.missing[(row, col)] {
                scores[(row, col)] = (raw.scores[(row, col)] - mu) / sigma;
            }
        }
    }
    AnnotationTable::new(
        raw.video_ids.clone(),
        raw.annotator_ids.clone(),
        scores,
        raw.missing.clone(),
        ScoreKind::ZScored,
    )
}

/// BT.500-style observer rejection.
///
/// Per (video, annotator) the score is compared against bounds derived from
/// the *other* annotators' scores on that video: mean +- 2*sigma when the
/// kurtosis beta2 lies in [2, 4], else mean +- sqrt(20)*sigma, with strict
/// comparisons. An annotator is rejected when exceedances are both frequent
/// ((P+Q)/votes > r1) and predominantly one-sided (|P-Q|/(P+Q) >= r2), which
/// is what catches a systematically off-scale scorer. Rejected columns are
/// masked out; surviving scores are untouched.
pub fn bt500_screen(
    table: &AnnotationTable,
    thresholds: &ScreeningConfig,
) -> Result<(AnnotationTable, ScreeningReport), StudyError> {
    table.validate()?;
    let live = table.live_columns();
    if live.len() < 2 {
        return Err(StudyError::TooFewAnnotators(live.len()));
    }

    let mut per_annotator = Vec::new();
    let mut rejected_ids = Vec::new();
    let mut rejected_cols = Vec::new();

    for &col in &live {
        let mut p = 0usize;
        let mut q = 0usize;
        let mut votes = 0usize;
        for row in 0..table.n_videos() {
            if table.missing[(row, col)] {
                continue;
            }
            let peers: Vec<f64> = (0..table.n_annotators())
                .filter(|&c| c != col && !table.missing[(row, c)])
                .map(|c| table.scores[(row, c)])
                .collect();
            if peers.is_empty() {
                continue;
            }
            votes += 1;
            let mu = mean(&peers);
            let (m2, m4) = central_moments(&peers);
            let sigma = m2.sqrt();
            let beta2 = if m2 > 0.0 { m4 / (m2 * m2) } else { 0.0 };
            let width = if (2.0..=4.0).contains(&beta2) { 2.0 } else { 20f64.sqrt() };
            let x = table.scores[(row, col)];
            if x > mu + width * sigma {
                p += 1;
            } else if x < mu - width * sigma {
                q += 1;
            }
        }
        let ratio1 = if votes > 0 { (p + q) as f64 / votes as f64 } else { 0.0 };
        let ratio2 = if p + q > 0 { (p as f64 - q as f64).abs() / (p + q) as f64 } else { 0.0 };
        let rejected = ratio1 > thresholds.r1 && ratio2 >= thresholds.r2;
        if rejected {
            rejected_ids.push(table.annotator_ids[col].clone());
            rejected_cols.push(col);
        }
        per_annotator.push(AnnotatorStats {
            annotator_id: table.annotator_ids[col].clone(),
            p,
            q,
            ratio1,
            ratio2,
            rejected,
        });
    }

    if rejected_cols.len() == live.len() {
        return Err(StudyError::AllRejected);
    }

    let mut missing = table.missing.clone();
    for &col in &rejected_cols {
        for row in 0..table.n_videos() {
            missing[(row, col)] = true;
        }
    }

    let kurtosis_per_video = (0..table.n_videos())
        .map(|row| {
            let present: Vec<f64> = (0..table.n_annotators())
                .filter(|&c| !table.missing[(row, c)])
                .map(|c| table.scores[(row, c)])
                .collect();
            let (m2, m4) = central_moments(&present);
            if m2 > 0.0 {
                m4 / (m2 * m2)
            } else {
                0.0
            }
        })
        .collect();

    let screened = AnnotationTable::new(
        table.video_ids.clone(),
        table.annotator_ids.clone(),
        table.scores.clone(),
        missing,
        table.kind,
    )?;
    let report = ScreeningReport {
        rejected_annotators: rejected_ids,
        per_annotator,
        kurtosis_per_video,
    };
    Ok((screened, report))
}

/// Row means over surviving scores.
pub fn aggregate_mos(table: &AnnotationTable) -> Result<MosVector, StudyError> {
    table.validate()?;
    let mut mos = Vec::with_capacity(table.n_videos());
    let mut support = Vec::with_capacity(table.n_videos());
    for row in 0..table.n_videos() {
        let values: Vec<f64> = (0..table.n_annotators())
            .filter(|&c| !table.missing[(row, c)])
            .map(|c| table.scores[(row, c)])
            .collect();
        if values.is_empty() {
            return Err(StudyError::OrphanVideo(table.video_ids[row].clone()));
        }
        mos.push(mean(&values));
        support.push(values.len());
    }
    Ok(MosVector { video_ids: table.video_ids.clone(), mos, support_counts: support })
}

/// Whether screening runs on raw scores (BT.500 order, the default) or on
/// the z-scored table first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PipelineOrder {
    #[default]
    ScreenThenZscore,
    ZscoreThenScreen,
}

/// Full raw-table -> MOS pipeline: screening and normalisation in the
/// configured order, then aggregation.
pub fn process_study(
    raw: &AnnotationTable,
    thresholds: &ScreeningConfig,
    order: PipelineOrder,
) -> Result<(MosVector, ScreeningReport), StudyError> {
    let (screened, report) = match order {
        PipelineOrder::ScreenThenZscore => {
            let (screened, report) = bt500_screen(raw, thresholds)?;
            (zscore_normalize(&screened)?, report)
        }
        PipelineOrder::ZscoreThenScreen => {
            let z = zscore_normalize(raw)?;
            bt500_screen(&z, thresholds)?
        }
    };
    let mos = aggregate_mos(&screened)?;
    Ok((mos, report))
}

/// Parse the delimited annotation-table format: first row annotator ids,
/// first column video ids, empty cells = missing.
pub fn parse_table(text: &str, kind: ScoreKind) -> Result<AnnotationTable, StudyError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(StudyError::EmptyTable)?;
    let annotator_ids: Vec<String> =
        header.split('\t').skip(1).map(|s| s.trim().to_string()).collect();
    if annotator_ids.is_empty() {
        return Err(StudyError::EmptyTable);
    }
    let mut video_ids = Vec::new();
    let mut rows: Vec<Vec<(f64, bool)>> = Vec::new();
    for (lineno, line) in lines {
        let mut cells = line.split('\t');
        let vid = cells
            .next()
            .ok_or(StudyError::Parse { line: lineno + 1, message: "missing video id".into() })?;
        video_ids.push(vid.trim().to_string());
        let mut row = Vec::with_capacity(annotator_ids.len());
        for cell in cells {
            let trimmed = cell.trim();
            if trimmed.is_empty() {
                row.push((f64::NAN, true));
            } else {
                let v = trimmed.parse::<f64>().map_err(|e| StudyError::Parse {
                    line: lineno + 1,
                    message: format!("bad score {trimmed:?}: {e}"),
                })?;
                row.push((v, false));
            }
        }
        if row.len() != annotator_ids.len() {
            return Err(StudyError::Parse {
                line: lineno + 1,
                message: format!("expected {} cells, got {}", annotator_ids.len(), row.len()),
            });
        }
        rows.push(row);
    }
    let m = video_ids.len();
    let i = annotator_ids.len();
    if m == 0 {
        return Err(StudyError::EmptyTable);
    }
    let mut scores = Array2::zeros((m, i));
    let mut missing = Array2::from_elem((m, i), false);
    for (r, row) in rows.iter().enumerate() {
        for (c, &(v, miss)) in row.iter().enumerate() {
            scores[(r, c)] = if miss { 0.0 } else { v };
            missing[(r, c)] = miss;
        }
    }
    AnnotationTable::new(video_ids, annotator_ids, scores, missing, kind)
}

pub fn load_table(path: &Path) -> Result<AnnotationTable, StudyError> {
    let text = std::fs::read_to_string(path)?;
    parse_table(&text, ScoreKind::Raw)
}

pub fn table_to_tsv(table: &AnnotationTable) -> String {
    let mut s = String::from("video_id");
    for a in &table.annotator_ids {
        let _ = write!(s, "\t{a}");
    }
    s.push('\n');
    for row in 0..table.n_videos() {
        let _ = write!(s, "{}", table.video_ids[row]);
        for col in 0..table.n_annotators() {
            if table.missing[(row, col)] {
                s.push('\t');
            } else {
                let _ = write!(s, "\t{}", table.scores[(row, col)]);
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn single_column(values: &[f64]) -> AnnotationTable {
        AnnotationTable::from_rows(
            (0..values.len()).map(|i| format!("v{i}")).collect(),
            vec!["a0".into()],
            values.iter().map(|v| vec![*v]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zscore_column_values() {
        let t = single_column(&[2.0, 4.0, 6.0]);
        let z = zscore_normalize(&t).unwrap();
        assert!(z.scores[(1, 0)].abs() < 1e-15);
        // (6 - 4) / sqrt(8/3), population sigma.
        assert!((z.scores[(2, 0)] - 1.224744871391589).abs() < 1e-12);
        assert_eq!(z.kind, ScoreKind::ZScored);
    }

    #[test]
    fn zscore_degenerate_column() {
        let t = single_column(&[5.0, 5.0, 5.0]);
        assert_eq!(
            zscore_normalize(&t),
            Err(StudyError::DegenerateAnnotator("a0".into()))
        );
    }

    #[test]
    fn zscore_columns_are_standardised() {
        let t = synth::annotation_table_random(5, 40, 7);
        let z = zscore_normalize(&t).unwrap();
        for col in 0..z.n_annotators() {
            let vals: Vec<f64> = (0..z.n_videos()).map(|r| z.scores[(r, col)]).collect();
            let mu = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / vals.len() as f64;
            assert!(mu.abs() < 1e-9, "column {col} mean {mu}");
            assert!((var.sqrt() - 1.0).abs() < 1e-9, "column {col} sigma {}", var.sqrt());
        }
    }

    #[test]
    fn zscore_preserves_mask() {
        let mut t = synth::annotation_table_random(4, 6, 3);
        t.missing[(2, 1)] = true;
        let z = zscore_normalize(&t).unwrap();
        assert!(z.missing[(2, 1)]);
        assert_eq!(z.missing, t.missing);
    }

    #[test]
    fn screening_rejects_planted_uniform_scorer() {
        let t = synth::annotation_table_with_outlier(21, 40, 17);
        let (screened, report) = bt500_screen(&t, &ScreeningConfig::default()).unwrap();
        assert_eq!(report.rejected_annotators, vec!["a20".to_string()]);
        // Only the rejected column gains mask entries; scores untouched.
        assert_eq!(screened.scores, t.scores);
        for row in 0..t.n_videos() {
            assert!(screened.missing[(row, 20)]);
        }
        // Idempotence on this fixture: re-screening rejects nobody else.
        let (_, second) = bt500_screen(&screened, &ScreeningConfig::default()).unwrap();
        assert!(second.rejected_annotators.is_empty());
    }

    #[test]
    fn screening_keeps_identical_columns() {
        let rows: Vec<Vec<f64>> = (0..6).map(|r| vec![(r + 2) as f64; 4]).collect();
        let t = AnnotationTable::from_rows(
            (0..6).map(|i| format!("v{i}")).collect(),
            (0..4).map(|i| format!("a{i}")).collect(),
            rows,
        )
        .unwrap();
        let (_, report) = bt500_screen(&t, &ScreeningConfig::default()).unwrap();
        assert!(report.rejected_annotators.is_empty());
        for st in &report.per_annotator {
            assert_eq!((st.p, st.q), (0, 0));
        }
    }

    #[test]
    fn screening_needs_two_annotators() {
        let t = single_column(&[2.0, 3.0, 4.0]);
        assert_eq!(
            bt500_screen(&t, &ScreeningConfig::default()),
            Err(StudyError::TooFewAnnotators(1))
        );
    }

    #[test]
    fn screening_aborts_when_everyone_is_rejected() {
        // Two annotators on opposite ends of the scale: each is an extreme
        // outlier against the other, which signals corrupt data.
        let rows: Vec<Vec<f64>> =
            (0..10).map(|m| vec![2.0 + (m % 2) as f64, 8.0 + (m % 2) as f64]).collect();
        let t = AnnotationTable::from_rows(
            (0..10).map(|i| format!("v{i}")).collect(),
            vec!["a0".into(), "a1".into()],
            rows,
        )
        .unwrap();
        assert_eq!(bt500_screen(&t, &ScreeningConfig::default()), Err(StudyError::AllRejected));
    }

    #[test]
    fn aggregate_masks_and_means() {
        let mut t = AnnotationTable::from_rows(
            vec!["v0".into(), "v1".into()],
            vec!["a0".into(), "a1".into(), "a2".into()],
            vec![vec![1.0, 1.0, 10.0], vec![1.5, 2.0, 2.5]],
        )
        .unwrap();
        t.kind = ScoreKind::ZScored; // allow the negative values below
        t.scores[(0, 0)] = 1.0;
        t.scores[(0, 1)] = -1.0;
        t.missing[(0, 2)] = true;
        t.scores[(1, 0)] = 0.5;
        t.missing[(1, 1)] = true;
        t.scores[(1, 2)] = 1.5;
        let mos = aggregate_mos(&t).unwrap();
        assert_eq!(mos.mos[0], 0.0);
        assert_eq!(mos.support_counts[0], 2);
        assert_eq!(mos.mos[1], 1.0);
        assert_eq!(mos.support_counts[1], 2);
    }

    #[test]
    fn aggregate_orphan_video() {
        let mut t = AnnotationTable::from_rows(
            vec!["v0".into()],
            vec!["a0".into(), "a1".into()],
            vec![vec![2.0, 3.0]],
        )
        .unwrap();
        t.missing[(0, 0)] = true;
        t.missing[(0, 1)] = true;
        assert_eq!(aggregate_mos(&t), Err(StudyError::OrphanVideo("v0".into())));
    }

    #[test]
    fn aggregate_matches_brute_force_row_means() {
        let t = synth::annotation_table_random(3, 3, 5);
        let mos = aggregate_mos(&t).unwrap();
        for row in 0..3 {
            let manual: f64 = (0..3).map(|c| t.scores[(row, c)]).sum::<f64>() / 3.0;
            assert!((mos.mos[row] - manual).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_is_permutation_equivariant() {
        let t = synth::annotation_table_random(6, 5, 8);
        let base = aggregate_mos(&t).unwrap();

        // Swap two annotator columns: MOS unchanged up to summation order.
        let mut cols = t.clone();
        for row in 0..cols.n_videos() {
            let tmp = cols.scores[(row, 1)];
            cols.scores[(row, 1)] = cols.scores[(row, 3)];
            cols.scores[(row, 3)] = tmp;
        }
        cols.annotator_ids.swap(1, 3);
        for (a, b) in aggregate_mos(&cols).unwrap().mos.iter().zip(&base.mos) {
            assert!((a - b).abs() < 1e-12);
        }

        // Swap two video rows: MOS swaps with them.
        let mut rows = t.clone();
        for col in 0..rows.n_annotators() {
            let tmp = rows.scores[(0, col)];
            rows.scores[(0, col)] = rows.scores[(2, col)];
            rows.scores[(2, col)] = tmp;
        }
        rows.video_ids.swap(0, 2);
        let swapped = aggregate_mos(&rows).unwrap();
        assert_eq!(swapped.mos[0], base.mos[2]);
        assert_eq!(swapped.mos[2], base.mos[0]);
    }

    #[test]
    fn table_roundtrip_with_missing_cells() {
        let mut t = synth::annotation_table_random(4, 3, 11);
        t.missing[(1, 2)] = true;
        let text = table_to_tsv(&t);
        let parsed = parse_table(&text, ScoreKind::Raw).unwrap();
        assert_eq!(parsed.video_ids, t.video_ids);
        assert_eq!(parsed.annotator_ids, t.annotator_ids);
        assert_eq!(parsed.missing, t.missing);
        for row in 0..4 {
            for col in 0..3 {
                if !t.missing[(row, col)] {
                    assert!((parsed.scores[(row, col)] - t.scores[(row, col)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pipeline_orders_agree_on_consensus_tables() {
        // Annotators agree up to a constant personal offset. Neither order
        // rejects anybody, so both reduce to zscore + aggregate.
        let offsets = [-1.0, 0.0, 1.0, 0.0, -1.0, 1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 1.0];
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|m| {
                let base = 3.0 + (m % 5) as f64;
                offsets.iter().map(|o| base + o).collect()
            })
            .collect();
        let t = AnnotationTable::from_rows(
            (0..30).map(|i| format!("v{i:02}")).collect(),
            (0..12).map(|i| format!("a{i}")).collect(),
            rows,
        )
        .unwrap();
        let (a, ra) =
            process_study(&t, &ScreeningConfig::default(), PipelineOrder::ScreenThenZscore)
                .unwrap();
        let (b, rb) =
            process_study(&t, &ScreeningConfig::default(), PipelineOrder::ZscoreThenScreen)
                .unwrap();
        assert!(ra.rejected_annotators.is_empty());
        assert!(rb.rejected_annotators.is_empty());
        for (x, y) in a.mos.iter().zip(&b.mos) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
