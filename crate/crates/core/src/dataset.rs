//! Line-delimited JSON dataset records.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{InstructionSample, Task};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub image: String,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    pub answer: String,
    /// Rendered prompt, filled in by the mixer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    /// Source dataset name, filled in by the mixer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
}

impl DatasetRecord {
    pub fn sample(&self) -> InstructionSample {
        InstructionSample {
            task: self.task,
            question: self.question.clone(),
            answer: self.answer.clone(),
        }
    }

    /// Image path resolved against the directory holding the dataset file.
    pub fn image_path(&self, dataset_dir: &Path) -> PathBuf {
        let p = Path::new(&self.image);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            dataset_dir.join(p)
        }
    }
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(r: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut w: W, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_records(path: &Path) -> Result<Vec<DatasetRecord>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_jsonl(f)
}

pub fn save_records(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_jsonl(f, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trip() {
        let line = r#"{"image":"img/0.ppm","task":"vqa","question":"Q?","answer":"A"}"#;
        let recs: Vec<DatasetRecord> = read_jsonl(line.as_bytes()).unwrap();
        assert_eq!(recs[0].task, Task::Vqa);
        assert_eq!(recs[0].prompt, None);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &recs).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim_end(), line);
    }

    #[test]
    fn bad_line_reports_its_number() {
        let text = "{\"image\":\"a\",\"task\":\"caption\",\"answer\":\"x\"}\n{oops}\n";
        let err = read_jsonl::<DatasetRecord, _>(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
