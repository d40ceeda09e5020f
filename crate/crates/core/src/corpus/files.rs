use std::path::Path;

use crate::error::{Error, Result};

use super::Story;

const LABELED_COLUMNS: [&str; 8] = [
    "storyid",
    "sentence1",
    "sentence2",
    "sentence3",
    "sentence4",
    "ending1",
    "ending2",
    "answer",
];

const UNLABELED_COLUMNS: [&str; 6] = [
    "storyid",
    "sentence1",
    "sentence2",
    "sentence3",
    "sentence4",
    "sentence5",
];

fn row_error(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::CsvRow {
        path: path.display().to_string(),
        row,
        message: message.into(),
    }
}

/// Load a labeled CSV: header `storyid,sentence1..sentence4,ending1,ending2,
/// answer` with an optional trailing `kind` column. `answer` is 1-based in
/// the file and 0-based in memory.
pub fn load_labeled(path: impl AsRef<Path>) -> Result<Vec<Story>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    for (i, expected) in LABELED_COLUMNS.iter().enumerate() {
        if headers.get(i) != Some(*expected) {
            return Err(row_error(
                path,
                0,
                format!("expected column {i} to be {expected:?}, header was {headers:?}"),
            ));
        }
    }
    let has_kind = headers.get(LABELED_COLUMNS.len()) == Some("kind");
    let expected_len = LABELED_COLUMNS.len() + usize::from(has_kind);

    let mut stories = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| row_error(path, row, e.to_string()))?;
        if record.len() != expected_len {
            return Err(row_error(
                path,
                row,
                format!("expected {expected_len} fields, found {}", record.len()),
            ));
        }
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let answer = record.get(7).unwrap_or("");
        let label = match answer {
            "1" => 0,
            "2" => 1,
            other => {
                return Err(row_error(
                    path,
                    row,
                    format!("answer must be 1 or 2, got {other:?}"),
                ))
            }
        };
        let mut story = Story::labeled(
            field(0),
            [field(1), field(2), field(3), field(4)],
            [field(5), field(6)],
            label,
        )?;
        if has_kind {
            story.kind = Some(field(8));
        }
        stories.push(story);
    }
    Ok(stories)
}

/// Load an unlabeled CSV: header `storyid,sentence1..sentence5`; the fifth
/// sentence is the gold ending.
pub fn load_unlabeled(path: impl AsRef<Path>) -> Result<Vec<Story>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    for (i, expected) in UNLABELED_COLUMNS.iter().enumerate() {
        if headers.get(i) != Some(*expected) {
            return Err(row_error(
                path,
                0,
                format!("expected column {i} to be {expected:?}, header was {headers:?}"),
            ));
        }
    }
    let mut stories = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| row_error(path, row, e.to_string()))?;
        if record.len() != UNLABELED_COLUMNS.len() {
            return Err(row_error(
                path,
                row,
                format!(
                    "expected {} fields, found {}",
                    UNLABELED_COLUMNS.len(),
                    record.len()
                ),
            ));
        }
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        stories.push(Story::unlabeled(
            field(0),
            [field(1), field(2), field(3), field(4)],
            field(5),
        ));
    }
    Ok(stories)
}

/// Write labeled stories; emits the `kind` column when any story carries one.
pub fn write_labeled(path: impl AsRef<Path>, stories: &[Story]) -> Result<()> {
    let with_kind = stories.iter().any(|s| s.kind.is_some());
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let mut header: Vec<&str> = LABELED_COLUMNS.to_vec();
    if with_kind {
        header.push("kind");
    }
    writer.write_record(&header)?;
    for story in stories {
        let label = story.label().ok_or_else(|| {
            Error::contract(format!("story {} is unlabeled; cannot write answer", story.id))
        })?;
        let endings = story.endings();
        let mut record = vec![
            story.id.clone(),
            story.body[0].clone(),
            story.body[1].clone(),
            story.body[2].clone(),
            story.body[3].clone(),
            endings[0].clone(),
            endings[1].clone(),
            (label + 1).to_string(),
        ];
        if with_kind {
            record.push(story.kind.clone().unwrap_or_default());
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_unlabeled(path: impl AsRef<Path>, stories: &[Story]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    writer.write_record(UNLABELED_COLUMNS)?;
    for story in stories {
        writer.write_record([
            story.id.as_str(),
            &story.body[0],
            &story.body[1],
            &story.body[2],
            &story.body[3],
            story.gold_ending(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
