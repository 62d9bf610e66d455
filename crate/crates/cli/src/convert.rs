//! MITweet CSV to manifest conversion.
//!
//! Expected columns: `topic`, `tweet` (or `text`), optionally `id`, and for
//! the i-th facet in schema order a relevance column named `R{i}` or
//! `R{i}-...` holding 0/1 and an ideology column `I{i}` or `I{i}-...`
//! holding 0/1/2 for Left/Center/Right and -1 or empty when unrelated.
//! Files whose stem is train, val/valid/dev or test also yield a split file.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use bico_core::data::{write_manifest, Sample, SplitIds};
use bico_core::schema::load_schema;
use bico_core::{Ideology, Relevance, SchemaSpec};

struct Columns {
    id: Option<usize>,
    topic: usize,
    text: usize,
    relevance: Vec<usize>,
    ideology: Vec<usize>,
}

fn facet_column(headers: &csv::StringRecord, prefix: char, i: usize) -> Result<usize> {
    let exact = format!("{prefix}{i}");
    let dashed = format!("{prefix}{i}-");
    headers
        .iter()
        .position(|h| {
            let h = h.trim();
            h == exact || h.starts_with(&dashed)
        })
        .ok_or_else(|| anyhow!("no column {exact} (or {exact}-...)"))
}

fn columns(headers: &csv::StringRecord, facets: usize) -> Result<Columns> {
    let find = |names: &[&str]| headers.iter().position(|h| names.contains(&h.trim()));
    Ok(Columns {
        id: find(&["id", "tweet_id"]),
        topic: find(&["topic"]).ok_or_else(|| anyhow!("no topic column"))?,
        text: find(&["tweet", "text"]).ok_or_else(|| anyhow!("no tweet/text column"))?,
        relevance: (1..=facets)
            .map(|i| facet_column(headers, 'R', i))
            .collect::<Result<_>>()?,
        ideology: (1..=facets)
            .map(|i| facet_column(headers, 'I', i))
            .collect::<Result<_>>()?,
    })
}

fn parse_ideology(v: &str) -> Result<Option<Ideology>> {
    match v.trim() {
        "" | "-1" => Ok(None),
        "0" => Ok(Some(Ideology::Left)),
        "1" => Ok(Some(Ideology::Center)),
        "2" => Ok(Some(Ideology::Right)),
        other => bail!("ideology value {other:?} is not one of -1, 0, 1, 2"),
    }
}

fn parse_relevance(v: &str) -> Result<Relevance> {
    match v.trim() {
        "1" => Ok(Relevance::Related),
        "0" => Ok(Relevance::Unrelated),
        other => bail!("relevance value {other:?} is not 0 or 1"),
    }
}

fn read_file(path: &Path, codes: &[String]) -> Result<Vec<Sample>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let cols = columns(&headers, codes.len()).with_context(|| format!("{}", path.display()))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("mitweet").to_string();
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{} row {}", path.display(), row + 2))?;
        let at = |c: usize| rec.get(c).unwrap_or("");
        let id = match cols.id {
            Some(c) => at(c).trim().to_string(),
            None => format!("{stem}-{row}"),
        };
        let mut relevance = BTreeMap::new();
        let mut ideology = BTreeMap::new();
        for (f, code) in codes.iter().enumerate() {
            let ctx = || format!("{} row {}, facet {code}", path.display(), row + 2);
            let r = parse_relevance(at(cols.relevance[f])).with_context(ctx)?;
            let i = parse_ideology(at(cols.ideology[f])).with_context(ctx)?;
            match (r, i) {
                (Relevance::Related, Some(i)) => {
                    ideology.insert(code.clone(), i);
                }
                (Relevance::Related, None) => bail!("{}: Related without an ideology label", ctx()),
                (Relevance::Unrelated, Some(_)) => bail!("{}: ideology label on an Unrelated facet", ctx()),
                (Relevance::Unrelated, None) => {}
            }
            relevance.insert(code.clone(), r);
        }
        out.push(Sample {
            id,
            text: Some(at(cols.text).to_string()),
            topic: at(cols.topic).trim().to_string(),
            relevance,
            ideology,
        });
    }
    Ok(out)
}

pub fn run(input: &Path, out: &Path, schema: Option<&Path>) -> Result<()> {
    let schema = match schema {
        Some(p) => load_schema(p)?,
        None => SchemaSpec::default_mitweet(),
    };
    let codes = schema.facet_codes();
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!(bico_core::Error::Data(format!("no .csv files in {}", input.display())));
    }

    let mut samples = Vec::new();
    let mut split = SplitIds::default();
    let mut has_split = false;
    for f in &files {
        let part = read_file(f, &codes).map_err(|e| anyhow!(bico_core::Error::Data(format!("{e:#}"))))?;
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_ascii_lowercase();
        let bucket = match stem.as_str() {
            "train" => Some(&mut split.train),
            "val" | "valid" | "dev" => Some(&mut split.val),
            "test" => Some(&mut split.test),
            _ => None,
        };
        if let Some(b) = bucket {
            has_split = true;
            b.extend(part.iter().map(|s| s.id.clone()));
        }
        samples.extend(part);
    }
    let mut seen = HashSet::new();
    if let Some(s) = samples.iter().find(|s| !seen.insert(s.id.as_str())) {
        bail!(bico_core::Error::Data(format!("duplicate id {:?} across input files", s.id)));
    }

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let manifest = out.join("manifest.jsonl");
    write_manifest(&manifest, &samples)?;
    let split_path = out.join("split.json");
    if has_split {
        fs::write(&split_path, serde_json::to_string_pretty(&split)?)
            .with_context(|| format!("writing {}", split_path.display()))?;
    }
    let summary = json!({
        "manifest": manifest,
        "samples": samples.len(),
        "files": files.len(),
        "split": has_split.then_some(split_path),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
