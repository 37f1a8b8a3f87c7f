use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, DatasetManifest, ImageRecord, Relation, SceneGraph, SceneObject, Split};
use crate::tensor::Tensor;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageLine {
    id: String,
    split: Split,
    captions: Vec<String>,
    #[serde(default)]
    objects: Vec<SceneObject>,
    #[serde(default)]
    relations: Vec<Relation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features_file: Option<String>,
    embedding_key: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    vocab_hint: Vec<String>,
}

fn matrix_from_rows(id: &str, rows: Vec<Vec<f64>>) -> Result<Tensor, CorpusError> {
    let d = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(CorpusError::DimensionMismatch { id: id.to_string(), expected: d, found: bad.len() });
    }
    let n = rows.len();
    Tensor::new(n, d, rows.into_iter().flatten().collect())
        .map_err(|e| CorpusError::InvalidImage { id: id.to_string(), message: e.to_string() })
}

fn parse_image(line: ImageLine, base: &Path, line_no: usize) -> Result<ImageRecord, CorpusError> {
    let rows = match (line.features, line.features_file) {
        (Some(rows), None) => rows,
        (None, Some(file)) => {
            let path = base.join(&file);
            let text = std::fs::read_to_string(&path).map_err(|e| CorpusError::Parse {
                line: line_no,
                message: format!("features_file {}: {e}", path.display()),
            })?;
            serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
                line: line_no,
                message: format!("features_file {}: {e}", path.display()),
            })?
        }
        (Some(_), Some(_)) => {
            return Err(CorpusError::Parse { line: line_no, message: "both features and features_file given".into() })
        }
        (None, None) => {
            return Err(CorpusError::Parse { line: line_no, message: "missing features or features_file".into() })
        }
    };
    let features = matrix_from_rows(&line.id, rows)?;
    let objects = line.objects.into_iter().map(|o| SceneObject::new(&o.category, &o.attributes)).collect();
    Ok(ImageRecord {
        id: line.id,
        split: line.split,
        captions: line.captions,
        features,
        scene_graph: SceneGraph { objects, relations: line.relations },
        embedding_key: line.embedding_key,
    })
}

/// Reads a JSON-lines manifest. Blank lines are skipped; an optional
/// `{"vocab_hint": [...]}` line may precede the images. `features_file`
/// paths are resolved relative to the manifest's directory.
pub fn read_manifest<R: BufRead>(reader: R, base: &Path) -> Result<DatasetManifest, CorpusError> {
    let mut images = Vec::new();
    let mut vocab_hint = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        let parse_err = |e: serde_json::Error| CorpusError::Parse { line: line_no, message: e.to_string() };
        if value.get("vocab_hint").is_some() && value.get("id").is_none() {
            if vocab_hint.is_some() || !images.is_empty() {
                return Err(CorpusError::Parse {
                    line: line_no,
                    message: "vocab_hint must appear once, before the images".into(),
                });
            }
            let header: HeaderLine = serde_json::from_value(value).map_err(parse_err)?;
            vocab_hint = Some(header.vocab_hint);
            continue;
        }
        let parsed: ImageLine = serde_json::from_value(value).map_err(parse_err)?;
        images.push(parse_image(parsed, base, line_no)?);
    }
    DatasetManifest::new(images, vocab_hint)
}

pub fn write_manifest<W: Write>(manifest: &DatasetManifest, mut w: W) -> Result<(), CorpusError> {
    let to_io = |e: serde_json::Error| CorpusError::Io(e.into());
    if let Some(hint) = manifest.vocab_hint() {
        serde_json::to_writer(&mut w, &HeaderLine { vocab_hint: hint.to_vec() }).map_err(to_io)?;
        writeln!(w)?;
    }
    for img in manifest.images() {
        let line = ImageLine {
            id: img.id.clone(),
            split: img.split,
            captions: img.captions.clone(),
            objects: img.scene_graph.objects.clone(),
            relations: img.scene_graph.relations.clone(),
            features: Some((0..img.features.rows()).map(|r| img.features.row(r).to_vec()).collect()),
            features_file: None,
            embedding_key: img.embedding_key.clone(),
        };
        serde_json::to_writer(&mut w, &line).map_err(to_io)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let file = File::open(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        read_manifest(BufReader::new(file), base)
    }

    /// Writes the manifest with features inline.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        write_manifest(self, BufWriter::new(File::create(path)?))
    }
}

/// Loads and validates a JSON-lines manifest.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, CorpusError> {
    DatasetManifest::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<DatasetManifest, CorpusError> {
        read_manifest(text.as_bytes(), Path::new("."))
    }

    const A: &str = r#"{"id":"a","split":"train","captions":["a pink towel"],"objects":[{"category":"towel","attributes":["pink"]}],"relations":[],"features":[[1.0,0.0],[0.5,0.5]],"embedding_key":"img:a"}"#;
    const B: &str = r#"{"id":"b","split":"test","captions":["a toilet"],"objects":[{"category":"toilet"}],"features":[[0.0,1.0]],"embedding_key":"img:b"}"#;

    #[test]
    fn two_line_fixture() {
        let m = parse(&format!("{A}\n{B}\n")).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.get("a").unwrap().num_proposals(), 2);
        assert_eq!(m.get("b").unwrap().split, Split::Test);
        assert_eq!(m.d_feat(), 2);
    }

    #[test]
    fn duplicate_id_is_rejected() {
        match parse(&format!("{A}\n{A}\n")) {
            Err(CorpusError::DuplicateId(id)) => assert_eq!(id, "a"),
            other => panic!("expected DuplicateId, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        match parse(&format!("{A}\n\n{{not json\n")) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let bad = B.replace("[[0.0,1.0]]", "[[0.0,1.0,2.0]]");
        assert!(matches!(parse(&format!("{A}\n{bad}\n")), Err(CorpusError::DimensionMismatch { .. })));
        let ragged = A.replace("[0.5,0.5]", "[0.5]");
        assert!(matches!(parse(&ragged), Err(CorpusError::DimensionMismatch { .. })));
    }

    #[test]
    fn relation_out_of_range_is_rejected() {
        let bad = A.replace(r#""relations":[]"#, r#""relations":[[0,"on",3]]"#);
        assert!(matches!(parse(&bad), Err(CorpusError::InvalidImage { .. })));
    }

    #[test]
    fn categories_are_normalized_on_load() {
        let upper = A.replace(r#""category":"towel""#, r#""category":" Towel ""#);
        let m = parse(&upper).unwrap();
        assert_eq!(m.get("a").unwrap().scene_graph.objects[0].category, "towel");
    }

    #[test]
    fn vocab_hint_round_trips() {
        let text = format!("{{\"vocab_hint\":[\"towel\",\"pink\"]}}\n{A}\n");
        let m = parse(&text).unwrap();
        assert_eq!(m.vocab_hint().unwrap(), ["towel", "pink"]);
        let mut out = Vec::new();
        write_manifest(&m, &mut out).unwrap();
        assert_eq!(read_manifest(out.as_slice(), Path::new(".")).unwrap(), m);
    }
}
