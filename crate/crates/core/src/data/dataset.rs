use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const AUDIO_DIM: usize = 22;
pub const VISUAL_DIM: usize = 50;
pub const DEFAULT_SEQUENCE_LENGTH: usize = 48;

/// Columns per data row: `row, sequence_id, frame_index`, then noisy audio,
/// clean audio and visual features.
pub const FILE_COLUMNS: usize = 3 + 2 * AUDIO_DIM + VISUAL_DIM;

/// Frame-aligned noisy audio, clean audio and visual features.
#[derive(Clone, Debug, PartialEq)]
pub struct AVDataset {
    pub noisy_audio: Matrix,
    pub clean_audio: Matrix,
    pub visual: Matrix,
    /// `(start, length)` of each sequence; tiles `0..T` in order.
    pub sequence_bounds: Vec<(usize, usize)>,
}

impl AVDataset {
    pub fn new(
        noisy_audio: Matrix,
        clean_audio: Matrix,
        visual: Matrix,
        sequence_bounds: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let ds = AVDataset {
            noisy_audio,
            clean_audio,
            visual,
            sequence_bounds,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.noisy_audio.rows();
        if self.clean_audio.rows() != t || self.visual.rows() != t {
            return Err(Error::shape(
                "AVDataset",
                format!(
                    "noisy {} / clean {} / visual {} rows",
                    t,
                    self.clean_audio.rows(),
                    self.visual.rows()
                ),
            ));
        }
        if self.noisy_audio.cols() != AUDIO_DIM
            || self.clean_audio.cols() != AUDIO_DIM
            || self.visual.cols() != VISUAL_DIM
        {
            return Err(Error::shape(
                "AVDataset",
                format!(
                    "feature widths {}/{}/{}, expected {AUDIO_DIM}/{AUDIO_DIM}/{VISUAL_DIM}",
                    self.noisy_audio.cols(),
                    self.clean_audio.cols(),
                    self.visual.cols()
                ),
            ));
        }
        let mut next = 0;
        for &(start, len) in &self.sequence_bounds {
            if start != next || len == 0 {
                return Err(Error::Contract(format!(
                    "sequence bounds must tile the frames contiguously (bad entry ({start}, {len}))"
                )));
            }
            next += len;
        }
        if next != t {
            return Err(Error::Contract(format!("sequence bounds cover {next} of {t} frames")));
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        self.noisy_audio.rows()
    }

    pub fn n_sequences(&self) -> usize {
        self.sequence_bounds.len()
    }

    /// Frame indices of the given sequences, in the given order.
    pub fn frame_indices(&self, sequences: &[usize]) -> Vec<usize> {
        sequences
            .iter()
            .flat_map(|&s| {
                let (start, len) = self.sequence_bounds[s];
                start..start + len
            })
            .collect()
    }

    /// Concatenates whole sequences into a new dataset.
    pub fn select_sequences(&self, sequences: &[usize]) -> AVDataset {
        let rows = self.frame_indices(sequences);
        let mut bounds = Vec::with_capacity(sequences.len());
        let mut start = 0;
        for &s in sequences {
            let len = self.sequence_bounds[s].1;
            bounds.push((start, len));
            start += len;
        }
        AVDataset {
            noisy_audio: self.noisy_audio.select_rows(&rows),
            clean_audio: self.clean_audio.select_rows(&rows),
            visual: self.visual.select_rows(&rows),
            sequence_bounds: bounds,
        }
    }
}

fn header() -> String {
    let mut cols = vec!["row".to_string(), "sequence_id".into(), "frame_index".into()];
    cols.extend((0..AUDIO_DIM).map(|i| format!("noisy_{i}")));
    cols.extend((0..AUDIO_DIM).map(|i| format!("clean_{i}")));
    cols.extend((0..VISUAL_DIM).map(|i| format!("visual_{i}")));
    cols.join(",")
}

pub fn write_dataset<W: Write>(ds: &AVDataset, out: W) -> Result<()> {
    ds.validate()?;
    let mut w = BufWriter::new(out);
    writeln!(w, "{}", header())?;
    for (seq, &(start, len)) in ds.sequence_bounds.iter().enumerate() {
        for pos in 0..len {
            let row = start + pos;
            write!(w, "{row},{seq},{pos}")?;
            for m in [&ds.noisy_audio, &ds.clean_audio, &ds.visual] {
                for v in m.row(row) {
                    write!(w, ",{v}")?;
                }
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<AVDataset> {
    let reader = BufReader::new(input);
    let mut lines = reader.lines().enumerate();
    let err = |line: usize, msg: String| Error::Parse { line, msg };

    match lines.next() {
        Some((_, l)) => {
            let l = l?;
            if l.trim() != header() {
                return Err(err(1, "missing or malformed header row".into()));
            }
        }
        None => return Err(err(1, "empty file: missing header".into())),
    }

    let mut noisy = Vec::new();
    let mut clean = Vec::new();
    let mut visual = Vec::new();
    let mut bounds: Vec<(usize, usize)> = Vec::new();
    let mut current_seq: Option<u64> = None;
    let mut row_count = 0usize;

    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != FILE_COLUMNS {
            return Err(err(
                line_no,
                format!("expected {FILE_COLUMNS} columns, found {}", fields.len()),
            ));
        }
        let int = |s: &str| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| err(line_no, format!("non-integer field {s:?}")))
        };
        let row = int(fields[0])?;
        let seq = int(fields[1])?;
        let frame = int(fields[2])?;
        if row != row_count as u64 {
            return Err(err(line_no, format!("row index {row}, expected {row_count}")));
        }
        let expected_frame = match current_seq {
            Some(s) if s == seq => bounds.last().map_or(0, |b| b.1) as u64,
            _ => 0,
        };
        if frame != expected_frame {
            return Err(err(
                line_no,
                format!("frame index {frame} in sequence {seq}, expected {expected_frame}"),
            ));
        }
        if current_seq != Some(seq) {
            bounds.push((row_count, 0));
            current_seq = Some(seq);
        }
        bounds.last_mut().expect("sequence opened above").1 += 1;

        let mut values = Vec::with_capacity(FILE_COLUMNS - 3);
        for f in &fields[3..] {
            let v = f
                .trim()
                .parse::<f64>()
                .map_err(|_| err(line_no, format!("non-numeric field {f:?}")))?;
            if !v.is_finite() {
                return Err(err(line_no, format!("non-finite field {f:?}")));
            }
            values.push(v);
        }
        noisy.extend_from_slice(&values[..AUDIO_DIM]);
        clean.extend_from_slice(&values[AUDIO_DIM..2 * AUDIO_DIM]);
        visual.extend_from_slice(&values[2 * AUDIO_DIM..]);
        row_count += 1;
    }

    AVDataset::new(
        Matrix::from_vec(row_count, AUDIO_DIM, noisy)?,
        Matrix::from_vec(row_count, AUDIO_DIM, clean)?,
        Matrix::from_vec(row_count, VISUAL_DIM, visual)?,
        bounds,
    )
}

pub fn save_dataset(ds: &AVDataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(ds, fs::File::create(path)?)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<AVDataset> {
    read_dataset(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> AVDataset {
        let t = 5;
        AVDataset::new(
            Matrix::from_fn(t, AUDIO_DIM, |i, j| i as f64 + j as f64 * 0.01),
            Matrix::from_fn(t, AUDIO_DIM, |i, j| -(i as f64) * 0.5 + j as f64),
            Matrix::from_fn(t, VISUAL_DIM, |i, j| ((i * j) as f64).sqrt() / 3.0),
            vec![(0, 3), (3, 2)],
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let ds = tiny();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn header_has_expected_width() {
        assert_eq!(header().split(',').count(), 97);
    }

    #[test]
    fn short_row_is_reported_with_its_line() {
        let mut buf = Vec::new();
        write_dataset(&tiny(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let truncated: Vec<&str> = lines[3].split(',').collect();
        lines[3] = truncated[..96].join(",");
        let bad = lines.join("\n");
        match read_dataset(bad.as_bytes()) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 4);
                assert!(msg.contains("96"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        assert!(matches!(read_dataset("".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn non_numeric_and_non_monotone_rows_are_rejected() {
        let mut buf = Vec::new();
        write_dataset(&tiny(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();

        let bad_value = text.replacen(",0.01,", ",abc,", 1);
        assert!(matches!(read_dataset(bad_value.as_bytes()), Err(Error::Parse { .. })));

        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        // Swap frame index 1 for 2 in the first sequence.
        lines[2] = lines[2].replacen("1,0,1,", "1,0,2,", 1);
        let bad_order = lines.join("\n");
        match read_dataset(bad_order.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn selecting_sequences_keeps_alignment() {
        let ds = tiny();
        let sub = ds.select_sequences(&[1, 0]);
        assert_eq!(sub.sequence_bounds, vec![(0, 2), (2, 3)]);
        assert_eq!(sub.noisy_audio.row(0), ds.noisy_audio.row(3));
        assert_eq!(sub.visual.row(2), ds.visual.row(0));
        assert_eq!(sub.clean_audio.row(4), ds.clean_audio.row(2));
    }
}
