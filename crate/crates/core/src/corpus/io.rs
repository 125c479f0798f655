//! JSON Lines reading and writing.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{CorpusError, Dataset, LabeledText};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T, I>(path: &Path, items: I) -> Result<(), CorpusError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("dataset records serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_dataset(path: &Path) -> Result<Dataset, CorpusError> {
    let samples: Vec<LabeledText> = read_jsonl(path)?;
    let dataset = Dataset::new(samples);
    dataset.validate()?;
    Ok(dataset)
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<(), CorpusError> {
    write_jsonl(path, &dataset.samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_survives_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/d.jsonl");
        let d = Dataset::new(vec![LabeledText::new("a", "héllo wörld", 0), LabeledText::new("b", "x", 1)]);
        write_dataset(&path, &d).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), d);
    }

    #[test]
    fn parse_error_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(&path, "{\"id\":\"a\",\"text\":\"x\",\"label\":0}\nnot json\n").unwrap();
        match read_dataset(&path) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
