use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Ideology, Relevance};

/// One annotated text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub topic: String,
    pub relevance: BTreeMap<String, Relevance>,
    #[serde(default)]
    pub ideology: BTreeMap<String, Ideology>,
}

impl Sample {
    /// Checks labels against the known facet codes: relevance covers every
    /// code, and ideology labels appear only for related facets.
    pub fn validate(&self, codes: &[String]) -> Result<()> {
        let known: HashSet<&str> = codes.iter().map(String::as_str).collect();
        for code in self.relevance.keys().chain(self.ideology.keys()) {
            if !known.contains(code.as_str()) {
                return Err(Error::Data(format!("{}: unknown facet code {code:?}", self.id)));
            }
        }
        for code in codes {
            if !self.relevance.contains_key(code) {
                return Err(Error::Data(format!("{}: no relevance label for {code}", self.id)));
            }
        }
        for code in self.ideology.keys() {
            if self.relevance.get(code) != Some(&Relevance::Related) {
                return Err(Error::Data(format!(
                    "{}: ideology label for {code} but the facet is not Related",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Relevance labels in the order of `codes`.
    pub fn relevance_labels(&self, codes: &[String]) -> Vec<Relevance> {
        codes
            .iter()
            .map(|c| self.relevance.get(c).copied().unwrap_or(Relevance::Unrelated))
            .collect()
    }

    /// Positions in `codes` of the facets that carry an ideology label.
    pub fn labeled_facets(&self, codes: &[String]) -> Vec<(usize, Ideology)> {
        codes
            .iter()
            .enumerate()
            .filter_map(|(i, c)| self.ideology.get(c).map(|&l| (i, l)))
            .collect()
    }
}

/// Parses JSON Lines, validating every sample; blank lines are skipped.
pub fn parse_manifest(text: &str, codes: &[String]) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(line)
            .map_err(|e| Error::Data(format!("manifest line {}: {e}", lineno + 1)))?;
        s.validate(codes)
            .map_err(|e| Error::Data(format!("manifest line {}: {e}", lineno + 1)))?;
        if !ids.insert(s.id.clone()) {
            return Err(Error::Data(format!(
                "manifest line {}: duplicate id {:?}",
                lineno + 1,
                s.id
            )));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn read_manifest(path: impl AsRef<Path>, codes: &[String]) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, codes)
}

pub fn write_manifest(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for s in samples {
        serde_json::to_writer(&mut buf, s).map_err(|e| Error::Data(e.to_string()))?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codes() -> Vec<String> {
        vec!["EP".into(), "MF".into()]
    }

    #[test]
    fn valid_line() {
        let line = r#"{"id":"1","topic":"t","relevance":{"EP":"Related","MF":"Unrelated"},"ideology":{"EP":"Left"}}"#;
        let s = parse_manifest(line, &codes()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].ideology["EP"], Ideology::Left);
        assert_eq!(s[0].labeled_facets(&codes()), vec![(0, Ideology::Left)]);
        assert_eq!(
            s[0].relevance_labels(&codes()),
            vec![Relevance::Related, Relevance::Unrelated]
        );
    }

    #[test]
    fn ideology_on_unrelated_facet_is_rejected() {
        let line = r#"{"id":"1","topic":"t","relevance":{"EP":"Unrelated","MF":"Unrelated"},"ideology":{"EP":"Left"}}"#;
        let err = parse_manifest(line, &codes()).unwrap_err();
        assert!(err.to_string().contains("not Related"), "{err}");
    }

    #[test]
    fn unknown_code_and_label_are_rejected() {
        let bad_code = r#"{"id":"1","topic":"t","relevance":{"EP":"Related","MF":"Unrelated","XX":"Related"}}"#;
        assert!(parse_manifest(bad_code, &codes()).is_err());
        let bad_label = r#"{"id":"1","topic":"t","relevance":{"EP":"related","MF":"Unrelated"}}"#;
        assert!(parse_manifest(bad_label, &codes()).is_err());
    }

    #[test]
    fn incomplete_relevance_and_duplicate_ids_are_rejected() {
        let partial = r#"{"id":"1","topic":"t","relevance":{"EP":"Related"}}"#;
        assert!(parse_manifest(partial, &codes()).is_err());
        let line = r#"{"id":"1","topic":"t","relevance":{"EP":"Related","MF":"Unrelated"}}"#;
        let twice = format!("{line}\n{line}\n");
        assert!(parse_manifest(&twice, &codes()).is_err());
    }

    #[test]
    fn write_then_read_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let text = "{\"id\":\"b\",\"text\":\"hello\",\"topic\":\"t\",\"relevance\":{\"EP\":\"Unrelated\",\"MF\":\"Related\"},\"ideology\":{\"MF\":\"Right\"}}\n\
                    {\"id\":\"a\",\"topic\":\"u\",\"relevance\":{\"EP\":\"Unrelated\",\"MF\":\"Unrelated\"}}\n";
        let samples = parse_manifest(text, &codes()).unwrap();
        write_manifest(&path, &samples).unwrap();
        let back = read_manifest(&path, &codes()).unwrap();
        assert_eq!(back, samples);
        assert_eq!(back[0].id, "b");
    }
}
