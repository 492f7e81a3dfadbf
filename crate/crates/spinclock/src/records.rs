//! Shot records and their newline-delimited JSON persistence.
//!
//! One record per line with a stable field order, so identical runs produce
//! byte-identical files and ordinary text diffs localize changes. Lines
//! beginning with '#' are markers, not records; a writer that dies
//! mid-stream leaves `# truncated` so readers can tell a short file from a
//! complete one.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::measure::FluorOutcome;
use crate::{Error, Result};

pub const TRUNCATION_MARKER: &str = "# truncated";

/// Post-selection flags. Set by the sequencer and re-derivable by the
/// analysis module from the stored raw values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotFlags {
    pub qnd_out_of_range: bool,
    pub fluor_failed: bool,
    pub clock_outlier: bool,
}

impl ShotFlags {
    pub fn any(&self) -> bool {
        self.qnd_out_of_range || self.fluor_failed || self.clock_outlier
    }
}

/// Raw outputs of one experimental cycle.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ShotRecord {
    pub shot_index: u64,
    /// Wall-clock time of the shot, s (shot_index · T_c).
    pub t_s: f64,
    /// Cavity probe outcomes, spin units, as measured (beatnote shift
    /// still imprinted). Absent for sequences without a recorded probe.
    pub qnd1_jz: Option<f64>,
    pub qnd2_jz: Option<f64>,
    pub fluor: FluorOutcome,
    /// This shot's probe beatnote offset, Hz.
    pub delta_hz: f64,
    /// Programmed tip/pulse angle for scanned sequences, rad.
    pub theta_true: Option<f64>,
    pub flags: ShotFlags,
}

/// Streaming record writer. On any write failure it attempts to leave the
/// truncation marker before reporting the error.
pub struct RecordWriter<W: Write> {
    inner: W,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(inner: W) -> Self {
        RecordWriter { inner }
    }

    pub fn write_record(&mut self, record: &ShotRecord) -> Result<()> {
        let line = serde_json::to_string(record)?;
        if let Err(e) = self
            .inner
            .write_all(line.as_bytes())
            .and_then(|_| self.inner.write_all(b"\n"))
        {
            // best effort: mark the stream as truncated for readers
            let _ = self.inner.write_all(format!("\n{TRUNCATION_MARKER}\n").as_bytes());
            let _ = self.inner.flush();
            return Err(Error::Io(e));
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_records(path: &Path, records: &[ShotRecord]) -> Result<()> {
    let file = File::create(path)?;
    let mut w = RecordWriter::new(BufWriter::new(file));
    for r in records {
        w.write_record(r)?;
    }
    w.finish()
}

/// Read a record file. Comment lines are skipped; the truncation marker
/// turns into an error because the run did not complete.
pub fn read_records(path: &Path) -> Result<Vec<ShotRecord>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            if trimmed == TRUNCATION_MARKER {
                return Err(Error::TruncatedRecords);
            }
            continue;
        }
        out.push(serde_json::from_str(trimmed)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io;

    fn sample_record(i: u64) -> ShotRecord {
        ShotRecord {
            shot_index: i,
            t_s: i as f64,
            qnd1_jz: Some(1.5 + i as f64),
            qnd2_jz: None,
            fluor: FluorOutcome {
                counts_up: 1.0e7 + i as f64 * 0.1,
                counts_down: 9.9e6,
                pushed_position_mm: -0.07,
                normalized_jz: 12.25,
            },
            delta_hz: -1.25e6,
            theta_true: None,
            flags: ShotFlags::default(),
        }
    }

    #[test]
    fn round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.ndjson");
        let records: Vec<ShotRecord> = (0..25).map(sample_record).collect();
        write_records(&path, &records).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            // exact float round-trip through the text format
            assert_eq!(a.t_s, b.t_s);
            assert_eq!(a.qnd1_jz, b.qnd1_jz);
            assert_eq!(a.fluor.counts_up, b.fluor.counts_up);
            assert_eq!(a.flags, b.flags);
        }
        // a second write is byte-identical
        let bytes1 = std::fs::read(&path).unwrap();
        let path2 = dir.path().join("records2.ndjson");
        write_records(&path2, &records).unwrap();
        assert_eq!(bytes1, std::fs::read(&path2).unwrap());
    }

    #[test]
    fn truncation_marker_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.ndjson");
        let mut text = serde_json::to_string(&sample_record(0)).unwrap();
        text.push('\n');
        text.push_str(TRUNCATION_MARKER);
        text.push('\n');
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            read_records(&path).unwrap_err(),
            Error::TruncatedRecords
        ));
    }

    #[test]
    fn comment_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.ndjson");
        let mut text = String::from("# produced by a test\n");
        text.push_str(&serde_json::to_string(&sample_record(3)).unwrap());
        text.push('\n');
        std::fs::write(&path, text).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].shot_index, 3);
    }

    /// A writer that fails after a byte budget, standing in for a full disk.
    struct FailingWriter {
        budget: usize,
        sink: Vec<u8>,
    }

    impl Write for FailingWriter {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            if self.sink.len() + buf.len() > self.budget && !buf.starts_with(b"\n#") {
                return Err(io::Error::new(io::ErrorKind::WriteZero, "disk full"));
            }
            self.sink.extend_from_slice(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn failed_write_leaves_marker() {
        let mut w = RecordWriter::new(FailingWriter { budget: 700, sink: Vec::new() });
        let mut err = None;
        for i in 0..100 {
            if let Err(e) = w.write_record(&sample_record(i)) {
                err = Some(e);
                break;
            }
        }
        assert!(err.is_some(), "writer never hit the budget");
        let text = String::from_utf8(w.inner.sink).unwrap();
        assert!(text.ends_with(&format!("{TRUNCATION_MARKER}\n")));
    }
}
