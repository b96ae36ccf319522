//! Corpus ingestion and export.
//!
//! JSONL: one object per line with fields `text`, `coarse`, optional `fine`
//! and optional `split` ("train" | "test"). TSV: `text<TAB>coarse<TAB>fine?`.
//! When no record carries a split tag, an 80/20 stratified split is applied
//! deterministically (every fifth document of each class becomes test).

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, Document, Split};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    text: String,
    coarse: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    fine: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<String>,
}

#[derive(Default)]
struct CorpusBuilder {
    coarse_names: Vec<String>,
    coarse_ids: HashMap<String, usize>,
    fine_names: Vec<String>,
    fine_ids: HashMap<String, usize>,
    fine_parent: Vec<usize>,
    docs: Vec<(String, usize, Option<usize>, Option<Split>)>,
}

impl CorpusBuilder {
    fn add(
        &mut self,
        line_no: usize,
        text: String,
        coarse: &str,
        fine: Option<&str>,
        split: Option<Split>,
    ) -> Result<()> {
        if text.trim().is_empty() {
            return Err(Error::CorpusLine {
                line: line_no,
                msg: "empty text".to_string(),
            });
        }
        let c = match self.coarse_ids.get(coarse) {
            Some(&c) => c,
            None => {
                let c = self.coarse_names.len();
                self.coarse_names.push(coarse.to_string());
                self.coarse_ids.insert(coarse.to_string(), c);
                c
            }
        };
        let f = match fine {
            None => None,
            Some(name) => match self.fine_ids.get(name) {
                Some(&f) => {
                    if self.fine_parent[f] != c {
                        return Err(Error::HierarchyViolation {
                            fine: name.to_string(),
                            first: self.coarse_names[self.fine_parent[f]].clone(),
                            second: self.coarse_names[c].clone(),
                        });
                    }
                    Some(f)
                }
                None => {
                    let f = self.fine_names.len();
                    self.fine_names.push(name.to_string());
                    self.fine_ids.insert(name.to_string(), f);
                    self.fine_parent.push(c);
                    Some(f)
                }
            },
        };
        self.docs.push((text, c, f, split));
        Ok(())
    }

    fn finish(self) -> Result<Corpus> {
        if self.docs.is_empty() {
            return Err(Error::NoDocuments);
        }
        let tagged = self.docs.iter().filter(|d| d.3.is_some()).count();
        if tagged != 0 && tagged != self.docs.len() {
            return Err(Error::invalid(
                "load_corpus",
                format!(
                    "{} of {} records carry a split tag; tag all or none",
                    tagged,
                    self.docs.len()
                ),
            ));
        }

        let docs = if tagged == self.docs.len() {
            self.docs
                .into_iter()
                .map(|(text, coarse, fine, split)| Document {
                    text,
                    coarse,
                    fine,
                    split: split.unwrap(),
                })
                .collect()
        } else {
            // Stratified 80/20 by fine class (coarse when fine is absent):
            // every fifth document of a class, in file order, becomes test.
            let mut per_class: HashMap<(usize, Option<usize>), usize> = HashMap::new();
            self.docs
                .into_iter()
                .map(|(text, coarse, fine, _)| {
                    let k = per_class.entry((coarse, fine)).or_insert(0);
                    let split = if *k % 5 == 4 { Split::Test } else { Split::Train };
                    *k += 1;
                    Document {
                        text,
                        coarse,
                        fine,
                        split,
                    }
                })
                .collect()
        };

        let corpus = Corpus {
            docs,
            coarse_names: self.coarse_names,
            fine_names: self.fine_names,
            fine_parent: self.fine_parent,
        };
        corpus.validate()?;
        Ok(corpus)
    }
}

fn parse_split(line_no: usize, s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(Error::CorpusLine {
            line: line_no,
            msg: format!("unknown split {other:?} (expected \"train\" or \"test\")"),
        }),
    }
}

/// Load a JSONL corpus, building label-name maps in first-appearance order.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Corpus> {
    let content = fs::read_to_string(path)?;
    let mut builder = CorpusBuilder::default();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord = serde_json::from_str(line).map_err(|e| Error::CorpusLine {
            line: line_no,
            msg: e.to_string(),
        })?;
        let split = rec
            .split
            .as_deref()
            .map(|s| parse_split(line_no, s))
            .transpose()?;
        builder.add(line_no, rec.text, &rec.coarse, rec.fine.as_deref(), split)?;
    }
    builder.finish()
}

/// Load a `text<TAB>coarse<TAB>fine?` corpus.
pub fn load_tsv(path: impl AsRef<Path>) -> Result<Corpus> {
    let content = fs::read_to_string(path)?;
    let mut builder = CorpusBuilder::default();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::CorpusLine {
                line: line_no,
                msg: format!("expected 2 or 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let fine = fields.get(2).copied().filter(|f| !f.is_empty());
        builder.add(line_no, fields[0].to_string(), fields[1], fine, None)?;
    }
    builder.finish()
}

/// Dispatch on extension: `.tsv` loads as TSV, anything else as JSONL.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let p = path.as_ref();
    if p.extension().and_then(|e| e.to_str()) == Some("tsv") {
        load_tsv(p)
    } else {
        load_jsonl(p)
    }
}

/// Write a corpus in the JSONL format, including split tags so a reload
/// reproduces the same partition.
pub fn write_jsonl(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for doc in &corpus.docs {
        let rec = JsonlRecord {
            text: doc.text.clone(),
            coarse: corpus.coarse_names[doc.coarse].clone(),
            fine: doc.fine.map(|f| corpus.fine_names[f].clone()),
            split: Some(
                match doc.split {
                    Split::Train => "train",
                    Split::Test => "test",
                }
                .to_string(),
            ),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn write_tmp(content: &str, ext: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(format!("corpus.{ext}")), content).unwrap();
        dir
    }

    #[test]
    fn empty_file_errors_with_no_documents() {
        let dir = write_tmp("", "jsonl");
        match load_jsonl(dir.path().join("corpus.jsonl")) {
            Err(Error::NoDocuments) => {}
            other => panic!("expected NoDocuments, got {other:?}"),
        }
    }

    #[test]
    fn labels_get_ids_in_appearance_order() {
        let dir = write_tmp(
            r#"{"text":"ball game","coarse":"sports"}
{"text":"oil paint","coarse":"arts"}
{"text":"net win","coarse":"sports"}
{"text":"more sports text","coarse":"sports"}
{"text":"more arts text","coarse":"arts"}
{"text":"extra arts","coarse":"arts"}
"#,
            "jsonl",
        );
        let corpus = load_jsonl(dir.path().join("corpus.jsonl")).unwrap();
        assert_eq!(corpus.coarse_names, vec!["sports", "arts"]);
        assert_eq!(corpus.docs[0].coarse, 0);
        assert_eq!(corpus.docs[1].coarse, 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = write_tmp(
            "{\"text\":\"ok\",\"coarse\":\"a\"}\nnot json at all\n",
            "jsonl",
        );
        match load_jsonl(dir.path().join("corpus.jsonl")) {
            Err(Error::CorpusLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected line error, got {other:?}"),
        }
    }

    #[test]
    fn fine_label_under_two_coarse_parents_is_rejected() {
        let dir = write_tmp(
            r#"{"text":"alpha beta","coarse":"sports","fine":"tennis"}
{"text":"gamma delta","coarse":"arts","fine":"tennis"}
"#,
            "jsonl",
        );
        match load_jsonl(dir.path().join("corpus.jsonl")) {
            Err(Error::HierarchyViolation { fine, .. }) => assert_eq!(fine, "tennis"),
            other => panic!("expected hierarchy violation, got {other:?}"),
        }
    }

    #[test]
    fn stratified_split_applied_when_untagged() {
        let lines: String = (0..10)
            .map(|i| format!("{{\"text\":\"doc {i}\",\"coarse\":\"only\"}}\n"))
            .collect();
        let dir = write_tmp(&lines, "jsonl");
        let corpus = load_jsonl(dir.path().join("corpus.jsonl")).unwrap();
        assert_eq!(corpus.train_docs().count(), 8);
        assert_eq!(corpus.test_docs().count(), 2);
        // Deterministic: positions 4 and 9 are test.
        assert_eq!(corpus.docs[4].split, Split::Test);
        assert_eq!(corpus.docs[9].split, Split::Test);
    }

    #[test]
    fn mixed_split_tagging_is_rejected() {
        let dir = write_tmp(
            r#"{"text":"a b","coarse":"x","split":"train"}
{"text":"c d","coarse":"x"}
"#,
            "jsonl",
        );
        assert!(load_jsonl(dir.path().join("corpus.jsonl")).is_err());
    }

    #[test]
    fn tsv_round_trips_through_the_same_builder() {
        let dir = write_tmp(
            "first doc\tsports\ttennis\nsecond doc\tsports\tsoccer\nthird doc\tarts\nfourth\tsports\ttennis\nfifth\tarts\nsixth\tarts\n",
            "tsv",
        );
        let corpus = load_corpus(dir.path().join("corpus.tsv")).unwrap();
        assert_eq!(corpus.coarse_names, vec!["sports", "arts"]);
        assert_eq!(corpus.fine_names, vec!["tennis", "soccer"]);
        assert_eq!(corpus.docs[2].fine, None);
    }

    #[test]
    fn jsonl_round_trip_preserves_the_corpus() {
        let spec = SyntheticSpec {
            train_docs_per_fine: 5,
            test_docs_per_fine: 2,
            ..Default::default()
        };
        let corpus = generate_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.jsonl");
        write_jsonl(&corpus, &path).unwrap();
        let reloaded = load_jsonl(&path).unwrap();
        assert_eq!(corpus, reloaded);
    }
}
