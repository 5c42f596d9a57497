//! Cross-domain validation tasks: a source-domain query with its report,
//! judged against labeled demonstrations drawn from the other source domains.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::MultiDimReport;
use crate::domain::{Dataset, NewsItem, Verdict};
use crate::seeds::substream;

/// Precomputed reports keyed by item id.
pub type Reports = BTreeMap<String, MultiDimReport>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationTask {
    pub query: NewsItem,
    pub query_report: MultiDimReport,
    /// Labeled examples from domains other than the query's.
    pub demonstrations: Vec<NewsItem>,
    pub gold: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSetConfig {
    pub n_tasks: usize,
    pub demos_per_task: usize,
    /// Items sampled per source domain before task construction.
    pub per_domain_cap: usize,
}

impl Default for TaskSetConfig {
    fn default() -> Self {
        Self {
            n_tasks: 500,
            demos_per_task: 4,
            per_domain_cap: 100,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaskError {
    #[error("cross-domain tasks need at least two source domains, found {0}")]
    SingleDomain(usize),
    #[error("no precomputed report for sampled query {0}")]
    MissingReport(String),
    #[error("domain {domain}: only {available} demonstrations available outside it, {needed} needed")]
    NotEnoughDemos {
        domain: String,
        available: usize,
        needed: usize,
    },
    #[error("n_tasks must be positive")]
    NoTasks,
}

/// Uniform sample of `min(cap, len)` items without replacement, kept in
/// original order.
pub fn cap_domain(dataset: &Dataset, cap: usize, seed: u64) -> Dataset {
    let cap = cap.max(1);
    if dataset.len() <= cap {
        return dataset.clone();
    }
    let mut rng = substream(seed, &format!("cap/{}", dataset.name));
    let mut picked = index::sample(&mut rng, dataset.len(), cap).into_vec();
    picked.sort_unstable();
    let items = picked.into_iter().map(|i| dataset.items()[i].clone()).collect();
    Dataset::new(dataset.name.clone(), items).expect("subset of a valid dataset")
}

/// Samples `count` demonstrations from `pool` without replacement, half fake
/// and half real when both classes have enough items (the odd one is real),
/// and shuffles them.
pub fn sample_demonstrations(pool: &[&NewsItem], count: usize, rng: &mut impl Rng) -> Vec<NewsItem> {
    let count = count.min(pool.len());
    let (fake, real): (Vec<&NewsItem>, Vec<&NewsItem>) = pool.iter().partition(|i| i.label == Verdict::Fake);
    let mut want_fake = (count / 2).min(fake.len());
    let want_real = (count - want_fake).min(real.len());
    want_fake = count - want_real;
    let mut out: Vec<NewsItem> = index::sample(rng, fake.len(), want_fake)
        .into_iter()
        .map(|i| fake[i].clone())
        .chain(
            index::sample(rng, real.len(), want_real)
                .into_iter()
                .map(|i| real[i].clone()),
        )
        .collect();
    out.shuffle(rng);
    out
}

/// Builds `n_tasks` tasks. Query domains rotate round-robin in sorted order;
/// within a domain queries are drawn without replacement until exhausted,
/// then with replacement.
pub fn build_tasks(
    source_parts: &BTreeMap<String, Dataset>,
    reports: &Reports,
    config: &TaskSetConfig,
    seed: u64,
) -> Result<Vec<ValidationTask>, TaskError> {
    let domains: Vec<&String> = source_parts
        .iter()
        .filter(|(_, d)| !d.is_empty())
        .map(|(k, _)| k)
        .collect();
    if domains.len() < 2 {
        return Err(TaskError::SingleDomain(domains.len()));
    }
    if config.n_tasks == 0 {
        return Err(TaskError::NoTasks);
    }

    let pools: Vec<Vec<&NewsItem>> = domains
        .iter()
        .map(|d| {
            source_parts
                .iter()
                .filter(|(k, _)| k != d)
                .flat_map(|(_, ds)| ds.items())
                .collect()
        })
        .collect();
    for (d, pool) in domains.iter().zip(&pools) {
        if pool.len() < config.demos_per_task {
            return Err(TaskError::NotEnoughDemos {
                domain: (*d).clone(),
                available: pool.len(),
                needed: config.demos_per_task,
            });
        }
    }

    let mut rng = substream(seed, "tasks");
    let mut orders: Vec<Vec<usize>> = domains
        .iter()
        .map(|d| {
            let mut order: Vec<usize> = (0..source_parts[*d].len()).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect();
    let mut cursors = vec![0usize; domains.len()];
    let mut warned = vec![false; domains.len()];

    let mut tasks = Vec::with_capacity(config.n_tasks);
    for t in 0..config.n_tasks {
        let di = t % domains.len();
        let part = &source_parts[domains[di]];
        let idx = if cursors[di] < orders[di].len() {
            cursors[di] += 1;
            orders[di][cursors[di] - 1]
        } else {
            if !warned[di] {
                tracing::warn!(domain = %domains[di], "query pool exhausted; sampling with replacement");
                warned[di] = true;
            }
            rng.gen_range(0..part.len())
        };
        let query = part.items()[idx].clone();
        let query_report = reports
            .get(&query.id)
            .cloned()
            .ok_or_else(|| TaskError::MissingReport(query.id.clone()))?;
        let demonstrations = sample_demonstrations(&pools[di], config.demos_per_task, &mut rng);
        tasks.push(ValidationTask {
            gold: query.label,
            query,
            query_report,
            demonstrations,
        });
    }
    orders.clear();
    Ok(tasks)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoRef {
    pub id: String,
    pub domain: String,
    pub label: Verdict,
}

/// Archive record for one task; items are referenced by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub index: usize,
    pub query_id: String,
    pub query_domain: String,
    pub gold: Verdict,
    pub demos: Vec<DemoRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskArchiveHeader {
    pub seed: u64,
    pub config: TaskSetConfig,
    pub n_tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskArchiveLine {
    Header(TaskArchiveHeader),
    Task(TaskRecord),
}

/// Header line followed by one line per task.
pub fn task_archive(tasks: &[ValidationTask], config: &TaskSetConfig, seed: u64) -> Vec<TaskArchiveLine> {
    let mut lines = vec![TaskArchiveLine::Header(TaskArchiveHeader {
        seed,
        config: config.clone(),
        n_tasks: tasks.len(),
    })];
    lines.extend(tasks.iter().enumerate().map(|(index, t)| {
        TaskArchiveLine::Task(TaskRecord {
            index,
            query_id: t.query.id.clone(),
            query_domain: t.query.domain.clone(),
            gold: t.gold,
            demos: t
                .demonstrations
                .iter()
                .map(|d| DemoRef {
                    id: d.id.clone(),
                    domain: d.domain.clone(),
                    label: d.label,
                })
                .collect(),
        })
    }));
    lines
}
