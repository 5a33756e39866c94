use std::path::Path;

use super::{data_lines, read_to_string};
use crate::error::{Error, Result};
use crate::index::Document;

/// One JSON object per line with `id` and `text` fields.
pub fn parse_corpus_jsonl(text: &str) -> Result<Vec<Document>> {
    data_lines(text)
        .map(|(line, raw)| {
            serde_json::from_str::<Document>(raw)
                .map_err(|e| Error::parse(line, format!("corpus record: {e}")))
        })
        .collect()
}

/// `id \t text` rows.
pub fn parse_corpus_tsv(text: &str) -> Result<Vec<Document>> {
    data_lines(text)
        .map(|(line, raw)| {
            let (id, body) = raw
                .split_once('\t')
                .ok_or_else(|| Error::parse(line, "expected `id \\t text`"))?;
            Ok(Document::new(id.trim(), body))
        })
        .collect()
}

/// Read a corpus file, choosing the format from the extension (`.jsonl`,
/// `.json`, or anything else as TSV).
pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let text = read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => parse_corpus_jsonl(&text),
        _ => parse_corpus_tsv(&text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_formats() {
        let a = parse_corpus_jsonl(
            "{\"id\": \"D1\", \"text\": \"a a b\"}\n\n{\"id\":\"D2\",\"text\":\"a c\"}\n",
        )
        .unwrap();
        let b = parse_corpus_tsv("D1\ta a b\nD2\ta c\n").unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            parse_corpus_jsonl("{\"id\": 3}"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(parse_corpus_tsv("D1 no tab\n").is_err());
    }
}
