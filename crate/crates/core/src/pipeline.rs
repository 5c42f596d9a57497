//! Batch drivers and artifact plumbing shared by the command-line stages.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{Analyzer, MultiDimReport};
use crate::domain::NewsItem;
use crate::evidence::Retriever;
use crate::prompts::PromptRegistry;
use crate::tasks::Reports;

/// Identifies the inputs an artifact was produced from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub prompt_hashes: BTreeMap<String, String>,
}

impl Provenance {
    /// `config` is hashed through its canonical JSON form.
    pub fn new<C: Serialize>(config: &C, seed: u64, prompts: &PromptRegistry) -> Self {
        let canonical = serde_json::to_string(config).expect("config serializes");
        Self {
            config_hash: crate::prompts::sha256_hex(&canonical),
            seed,
            prompt_hashes: prompts.hashes(),
        }
    }
}

/// One line of the report archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchiveLine {
    Provenance(Provenance),
    Report(MultiDimReport),
}

pub fn load_reports(path: &Path) -> Result<Reports, String> {
    let lines: Vec<ArchiveLine> = crate::io::read_jsonl(path)?;
    Ok(lines
        .into_iter()
        .filter_map(|l| match l {
            ArchiveLine::Report(r) => Some((r.item_id.clone(), r)),
            ArchiveLine::Provenance(_) => None,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub item_id: String,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct AnalyzeSummary {
    pub reports: Reports,
    pub produced: usize,
    pub reused: usize,
    pub failures: Vec<ItemFailure>,
}

/// Analyzes every item not already in `existing`, in chunks of
/// `chunk_size`. After each chunk the archive at `archive` (when given) is
/// rewritten in item order, so an interrupted run can resume from it.
pub fn analyze_items(
    analyzer: &Analyzer<'_>,
    retriever: &Retriever,
    items: &[NewsItem],
    existing: Reports,
    chunk_size: usize,
    archive: Option<(&Path, &Provenance)>,
) -> std::io::Result<AnalyzeSummary> {
    let mut summary = AnalyzeSummary {
        reused: items.iter().filter(|i| existing.contains_key(&i.id)).count(),
        reports: existing,
        ..AnalyzeSummary::default()
    };
    let pending: Vec<&NewsItem> = items
        .iter()
        .filter(|i| !summary.reports.contains_key(&i.id))
        .collect();
    for chunk in pending.chunks(chunk_size.max(1)) {
        let results: Vec<_> = chunk
            .par_iter()
            .map(|item| (item.id.clone(), analyzer.analyze_full(item, retriever)))
            .collect();
        for (id, result) in results {
            match result {
                Ok(report) => {
                    summary.produced += 1;
                    summary.reports.insert(id, report);
                }
                Err(e) => {
                    tracing::error!(item = %id, error = %e, "analysis failed");
                    summary.failures.push(ItemFailure {
                        item_id: id,
                        error: e.to_string(),
                    });
                }
            }
        }
        if let Some((path, provenance)) = archive {
            write_archive(path, provenance, items, &summary.reports)?;
        }
    }
    if let Some((path, provenance)) = archive {
        if pending.is_empty() {
            write_archive(path, provenance, items, &summary.reports)?;
        }
    }
    Ok(summary)
}

/// Provenance line, then reports in `items` order; reports for other items
/// follow in id order.
pub fn write_archive(path: &Path, provenance: &Provenance, items: &[NewsItem], reports: &Reports) -> std::io::Result<()> {
    let mut lines = vec![ArchiveLine::Provenance(provenance.clone())];
    let mut seen = std::collections::BTreeSet::new();
    for item in items {
        if let Some(r) = reports.get(&item.id) {
            seen.insert(item.id.as_str());
            lines.push(ArchiveLine::Report(r.clone()));
        }
    }
    lines.extend(
        reports
            .iter()
            .filter(|(id, _)| !seen.contains(id.as_str()))
            .map(|(_, r)| ArchiveLine::Report(r.clone())),
    );
    crate::io::write_jsonl(path, &lines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::AnalysisConfig;
    use crate::domain::Verdict;
    use crate::provider::{Matcher, Role, ScriptEntry, ScriptedMock};

    fn items() -> Vec<NewsItem> {
        (0..3)
            .map(|i| NewsItem {
                id: format!("n{i}"),
                content: format!("item {i}"),
                comments: vec![],
                label: Verdict::Real,
                domain: "d".into(),
            })
            .collect()
    }

    fn mock() -> ScriptedMock {
        ScriptedMock::new(vec![
            ScriptEntry::text(Role::FactQuestion, Matcher::Any, "1. Is it true?"),
            ScriptEntry::text(Role::Questioning, Matcher::Any, "1. Why?"),
            ScriptEntry::text(Role::Linguistic, Matcher::Any, "1. Because."),
            ScriptEntry::text(Role::FactCheck, Matcher::Any, "1. Evidence."),
        ])
    }

    #[test]
    fn resume_skips_archived_items() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reports.jsonl");
        let prompts = PromptRegistry::builtin();
        let config = AnalysisConfig::default();
        let provenance = Provenance::new(&config, 1, &prompts);
        let items = items();

        let m = mock();
        let analyzer = Analyzer::new(&prompts, &m, &config);
        let first = analyze_items(&analyzer, &Retriever::disabled(), &items[..2], Reports::new(), 1, Some((&path, &provenance)))
            .unwrap();
        assert_eq!(first.produced, 2);
        let before = m.call_count();

        let loaded = load_reports(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        let again = analyze_items(&analyzer, &Retriever::disabled(), &items[..2], loaded, 1, Some((&path, &provenance)))
            .unwrap();
        assert_eq!((again.produced, again.reused), (0, 2));
        assert_eq!(m.call_count(), before);

        let more = analyze_items(&analyzer, &Retriever::disabled(), &items, load_reports(&path).unwrap(), 2, Some((&path, &provenance)))
            .unwrap();
        assert_eq!((more.produced, more.reused), (1, 2));

        let fresh = dir.path().join("fresh.jsonl");
        let m2 = mock();
        let a2 = Analyzer::new(&prompts, &m2, &config);
        analyze_items(&a2, &Retriever::disabled(), &items, Reports::new(), 3, Some((&fresh, &provenance))).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&fresh).unwrap());
    }

    #[test]
    fn provenance_tracks_config_and_prompts() {
        let prompts = PromptRegistry::builtin();
        let a = Provenance::new(&AnalysisConfig::default(), 1, &prompts);
        let b = Provenance::new(
            &AnalysisConfig {
                reflection_rounds: 0,
                ..AnalysisConfig::default()
            },
            1,
            &prompts,
        );
        assert_ne!(a.config_hash, b.config_hash);
        assert_eq!(a.prompt_hashes.len(), prompts.hashes().len());
    }
}
