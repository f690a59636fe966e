//! 3DMM coefficient data model: expression (64) and pose (6) per frame,
//! the CSV exchange format, and first-difference motion primitives.
//!
//! Pose layout is `[rot_x, rot_y, rot_z, tx, ty, tz]`: three rotations in
//! radians followed by three translations in normalized screen units.
//! Identity, texture and lighting coefficients, when a file carries them,
//! ride along in [`CoefficientFrame::extra`] and are never interpreted.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const BETA_DIM: usize = 64;
pub const POSE_DIM: usize = 6;
/// Expression followed by pose.
pub const COEFF_DIM: usize = BETA_DIM + POSE_DIM;
pub const DEFAULT_FPS: f64 = 30.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientFrame<S> {
    pub beta: [S; BETA_DIM],
    pub pose: [S; POSE_DIM],
    /// Opaque passthrough coefficients; empty when absent.
    pub extra: Vec<S>,
}

impl<S: Real> CoefficientFrame<S> {
    pub fn zeros() -> Self {
        Self {
            beta: [S::zero(); BETA_DIM],
            pose: [S::zero(); POSE_DIM],
            extra: Vec::new(),
        }
    }

    /// Builds a frame from a 70-entry `[beta | pose]` slice.
    pub fn from_slice(values: &[S]) -> Result<Self> {
        if values.len() != COEFF_DIM {
            return Err(Error::Shape(format!(
                "coefficient frame needs {COEFF_DIM} values, got {}",
                values.len()
            )));
        }
        let mut frame = Self::zeros();
        frame.beta.copy_from_slice(&values[..BETA_DIM]);
        frame.pose.copy_from_slice(&values[BETA_DIM..]);
        Ok(frame)
    }

    /// `[beta | pose]` as one vector.
    pub fn to_vec(&self) -> Vec<S> {
        self.beta.iter().chain(self.pose.iter()).copied().collect()
    }

    fn is_finite(&self) -> bool {
        self.beta
            .iter()
            .chain(self.pose.iter())
            .chain(self.extra.iter())
            .all(|v| v.is_finite())
    }
}

/// A validated, non-empty run of frames at a fixed frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientSequence<S> {
    frames: Vec<CoefficientFrame<S>>,
    fps: f64,
}

impl<S: Real> CoefficientSequence<S> {
    pub fn new(frames: Vec<CoefficientFrame<S>>, fps: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptySequence);
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Invalid(format!("fps must be positive, got {fps}")));
        }
        let extra_len = frames[0].extra.len();
        for (t, f) in frames.iter().enumerate() {
            if f.extra.len() != extra_len {
                return Err(Error::Shape(format!(
                    "frame {t} has {} extra coefficients, frame 0 has {extra_len}",
                    f.extra.len()
                )));
            }
            if !f.is_finite() {
                return Err(Error::Invalid(format!("frame {t} has a non-finite coefficient")));
            }
        }
        Ok(Self { frames, fps })
    }

    /// Builds a sequence from a `[T, 70]` matrix of `[beta | pose]` rows.
    pub fn from_matrix(m: &Array2<S>, fps: f64) -> Result<Self> {
        if m.ncols() != COEFF_DIM {
            return Err(Error::Shape(format!(
                "expected {COEFF_DIM} columns, got {}",
                m.ncols()
            )));
        }
        let frames = m
            .rows()
            .into_iter()
            .map(|r| CoefficientFrame::from_slice(&r.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames, fps)
    }

    /// `[T, 70]` matrix of `[beta | pose]` rows; `extra` is dropped.
    pub fn to_matrix(&self) -> Array2<S> {
        let mut m = Array2::zeros((self.len(), COEFF_DIM));
        for (mut row, f) in m.rows_mut().into_iter().zip(&self.frames) {
            for (dst, &v) in row.iter_mut().zip(f.beta.iter().chain(f.pose.iter())) {
                *dst = v;
            }
        }
        m
    }

    pub fn frames(&self) -> &[CoefficientFrame<S>] {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn extra_len(&self) -> usize {
        self.frames[0].extra.len()
    }

    /// First `n` frames (at least one).
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::new(self.frames[..n.min(self.len())].to_vec(), self.fps)
    }

    pub fn beta_matrix(&self) -> Array2<S> {
        self.to_matrix().slice(s![.., ..BETA_DIM]).to_owned()
    }

    pub fn pose_matrix(&self) -> Array2<S> {
        self.to_matrix().slice(s![.., BETA_DIM..]).to_owned()
    }
}

/// Motion between consecutive frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDelta<S> {
    pub beta: [S; BETA_DIM],
    pub pose: [S; POSE_DIM],
}

/// `frame[t+1] - frame[t]` for every consecutive pair.
pub fn frame_delta<S: Real>(seq: &CoefficientSequence<S>) -> Result<Vec<FrameDelta<S>>> {
    if seq.len() < 2 {
        return Err(Error::Invalid(format!(
            "frame_delta needs at least 2 frames, got {}",
            seq.len()
        )));
    }
    Ok(seq
        .frames
        .windows(2)
        .map(|w| {
            let mut d = FrameDelta {
                beta: [S::zero(); BETA_DIM],
                pose: [S::zero(); POSE_DIM],
            };
            for i in 0..BETA_DIM {
                d.beta[i] = w[1].beta[i] - w[0].beta[i];
            }
            for i in 0..POSE_DIM {
                d.pose[i] = w[1].pose[i] - w[0].pose[i];
            }
            d
        })
        .collect())
}

/// Expected header names, in order, for `extra_len` passthrough columns.
pub fn csv_header(extra_len: usize) -> Vec<String> {
    std::iter::once("frame".to_string())
        .chain((0..BETA_DIM).map(|i| format!("beta_{i}")))
        .chain((0..POSE_DIM).map(|i| format!("pose_{i}")))
        .chain((0..extra_len).map(|i| format!("extra_{i}")))
        .collect()
}

/// Parses the coefficient CSV format from text. `path` is used for messages.
pub fn parse_coefficient_csv<S: Real>(text: &str, path: &Path) -> Result<CoefficientSequence<S>> {
    let parse_err = |row: usize, column: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        column,
        msg,
    };
    let mut fps = DEFAULT_FPS;
    let mut lines = text.lines().enumerate().peekable();
    // Leading comment lines may carry `fps=<value>`.
    while let Some((lineno, line)) = lines.peek().copied() {
        let Some(comment) = line.trim_start().strip_prefix('#') else {
            break;
        };
        if let Some(v) = comment.trim().strip_prefix("fps=") {
            fps = v
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(lineno + 1, 1, format!("bad fps `{v}`: {e}")))?;
        }
        lines.next();
    }
    let (header_line, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, 1, "missing header".into()))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let base = csv_header(0);
    for (col, expected) in base.iter().enumerate() {
        match names.get(col) {
            Some(got) if got == expected => {}
            Some(got) => {
                return Err(parse_err(
                    header_line + 1,
                    col + 1,
                    format!("missing column `{expected}` (found `{got}`)"),
                ))
            }
            None => {
                return Err(parse_err(
                    header_line + 1,
                    col + 1,
                    format!("missing column `{expected}`"),
                ))
            }
        }
    }
    let extra_len = names.len() - base.len();
    for (i, name) in names[base.len()..].iter().enumerate() {
        if *name != format!("extra_{i}") {
            return Err(parse_err(
                header_line + 1,
                base.len() + i + 1,
                format!("unexpected column `{name}`, expected `extra_{i}`"),
            ));
        }
    }

    let mut frames = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row = lineno + 1;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != names.len() {
            return Err(parse_err(
                row,
                cells.len().min(names.len()) + 1,
                format!("expected {} cells, found {}", names.len(), cells.len()),
            ));
        }
        let index: usize = cells[0]
            .parse()
            .map_err(|_| parse_err(row, 1, format!("bad frame index `{}`", cells[0])))?;
        if index != frames.len() {
            return Err(parse_err(
                row,
                1,
                format!("frame index {index} out of order, expected {}", frames.len()),
            ));
        }
        let mut values = Vec::with_capacity(cells.len() - 1);
        for (c, cell) in cells.iter().enumerate().skip(1) {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(row, c + 1, format!("non-numeric cell `{cell}`")))?;
            if !v.is_finite() {
                return Err(parse_err(row, c + 1, format!("non-finite value `{cell}`")));
            }
            values.push(S::lit(v));
        }
        let mut frame = CoefficientFrame::from_slice(&values[..COEFF_DIM])?;
        frame.extra = values[COEFF_DIM..].to_vec();
        debug_assert_eq!(frame.extra.len(), extra_len);
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(Error::EmptySequence);
    }
    CoefficientSequence::new(frames, fps)
}

pub fn load_coefficient_sequence<S: Real>(path: impl AsRef<Path>) -> Result<CoefficientSequence<S>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_coefficient_csv(&text, path)
}

/// Renders the CSV text. Values use the shortest representation that parses
/// back to the same `f64`, so load after save is exact.
pub fn format_coefficient_csv<S: Real>(seq: &CoefficientSequence<S>) -> String {
    let mut out = String::new();
    writeln!(out, "# fps={}", seq.fps).unwrap();
    out.push_str(&csv_header(seq.extra_len()).join(","));
    out.push('\n');
    for (t, f) in seq.frames.iter().enumerate() {
        write!(out, "{t}").unwrap();
        for v in f.beta.iter().chain(f.pose.iter()).chain(f.extra.iter()) {
            write!(out, ",{}", v.as_f64()).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn save_coefficient_sequence<S: Real>(seq: &CoefficientSequence<S>, path: impl AsRef<Path>) -> Result<()> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let path = path.as_ref();
    fs::write(path, format_coefficient_csv(seq)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(t_len: usize, c: f64) -> CoefficientSequence<f64> {
        let frames = (0..t_len)
            .map(|t| {
                let mut f = CoefficientFrame::zeros();
                f.beta.iter_mut().for_each(|b| *b = t as f64 * c);
                f.pose[2] = 0.01 * t as f64;
                f
            })
            .collect();
        CoefficientSequence::new(frames, 30.0).unwrap()
    }

    #[test]
    fn zero_file_loads_two_zero_frames() {
        let mut text = csv_header(0).join(",") + "\n";
        for t in 0..2 {
            text += &format!("{t}{}\n", ",0".repeat(COEFF_DIM));
        }
        let seq: CoefficientSequence<f64> = parse_coefficient_csv(&text, Path::new("z.csv")).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.fps(), DEFAULT_FPS);
        assert!(seq.frames().iter().all(|f| *f == CoefficientFrame::zeros()));
    }

    #[test]
    fn missing_beta_column_is_named() {
        let header: Vec<String> = csv_header(0).into_iter().filter(|n| n != "beta_63").collect();
        let text = header.join(",") + "\n0" + &",0".repeat(COEFF_DIM - 1) + "\n";
        let err = parse_coefficient_csv::<f64>(&text, Path::new("bad.csv")).unwrap_err();
        assert!(err.to_string().contains("beta_63"), "{err}");
    }

    #[test]
    fn bad_cells_report_position() {
        let mut text = csv_header(0).join(",") + "\n";
        text += &format!("0{}\n", ",0".repeat(COEFF_DIM));
        text += &format!("1,abc{}\n", ",0".repeat(COEFF_DIM - 1));
        match parse_coefficient_csv::<f64>(&text, Path::new("x.csv")).unwrap_err() {
            Error::Parse { row, column, .. } => assert_eq!((row, column), (3, 2)),
            e => panic!("unexpected {e}"),
        }
        let mut short = csv_header(0).join(",") + "\n";
        short += &format!("0{}\n", ",0".repeat(COEFF_DIM - 2));
        assert!(matches!(
            parse_coefficient_csv::<f64>(&short, Path::new("x.csv")),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn fps_comment_is_read() {
        let text = format!("# fps=25\n{}\n0{}\n", csv_header(0).join(","), ",1".repeat(COEFF_DIM));
        let seq: CoefficientSequence<f32> = parse_coefficient_csv(&text, Path::new("f.csv")).unwrap();
        assert_eq!(seq.fps(), 25.0);
        assert_eq!(seq.frames()[0].pose[5], 1.0);
    }

    #[test]
    fn extra_columns_follow_pose_and_round_trip() {
        let mut f = CoefficientFrame::<f64>::zeros();
        f.extra = vec![1.5, -2.25, 1e-300];
        let seq = CoefficientSequence::new(vec![f], 30.0).unwrap();
        let text = format_coefficient_csv(&seq);
        let header = text.lines().nth(1).unwrap();
        assert!(header.ends_with("pose_5,extra_0,extra_1,extra_2"));
        let back: CoefficientSequence<f64> = parse_coefficient_csv(&text, Path::new("e.csv")).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn empty_sequence_rejected() {
        assert!(matches!(
            CoefficientSequence::<f64>::new(vec![], 30.0),
            Err(Error::EmptySequence)
        ));
    }

    #[test]
    fn save_and_load_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.csv");
        let seq = ramp(5, 0.125);
        save_coefficient_sequence(&seq, &path).unwrap();
        let back: CoefficientSequence<f64> = load_coefficient_sequence(&path).unwrap();
        assert_eq!(back, seq);
        assert!(load_coefficient_sequence::<f64>(dir.path().join("nope.csv")).is_err());
    }

    #[test]
    fn delta_of_constant_is_zero_and_ramp_is_step() {
        let constant = ramp(4, 0.0);
        for d in frame_delta(&constant).unwrap() {
            assert!(d.beta.iter().all(|&v| v == 0.0));
        }
        let r = ramp(6, 0.3);
        let deltas = frame_delta(&r).unwrap();
        assert_eq!(deltas.len(), 5);
        for d in deltas {
            assert!(d.beta.iter().all(|&v| (v - 0.3).abs() < 1e-12));
        }
        assert!(frame_delta(&ramp(1, 0.0)).is_err());
    }

    fn arb_sequence() -> impl Strategy<Value = CoefficientSequence<f64>> {
        (1usize..6, 0usize..3).prop_flat_map(|(t_len, extra)| {
            proptest::collection::vec(
                proptest::collection::vec(-1e3f64..1e3, COEFF_DIM + extra),
                t_len,
            )
            .prop_map(move |rows| {
                let frames = rows
                    .into_iter()
                    .map(|r| {
                        let mut f = CoefficientFrame::from_slice(&r[..COEFF_DIM]).unwrap();
                        f.extra = r[COEFF_DIM..].to_vec();
                        f
                    })
                    .collect();
                CoefficientSequence::new(frames, 29.97).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn load_after_save_is_identity(seq in arb_sequence()) {
            let text = format_coefficient_csv(&seq);
            let back: CoefficientSequence<f64> = parse_coefficient_csv(&text, Path::new("p.csv")).unwrap();
            prop_assert_eq!(back, seq);
        }

        #[test]
        fn cumulative_deltas_rebuild_sequence(seq in arb_sequence()) {
            prop_assume!(seq.len() >= 2);
            let deltas = frame_delta(&seq).unwrap();
            let mut acc = seq.frames()[0].to_vec();
            for (d, f) in deltas.iter().zip(&seq.frames()[1..]) {
                for (i, v) in d.beta.iter().chain(d.pose.iter()).enumerate() {
                    acc[i] += v;
                }
                for (a, b) in acc.iter().zip(f.to_vec()) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }
}
