use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use dscre_core::eval::{write_run_line, AlignedLabel};
use dscre_core::{align, default_scorer, parse, ParseConfig, PredictionRecord, REInstance, RelationTriplet};

use crate::backend::HttpBackend;
use crate::{build_prompt, cache_key, extract_answer, BackendConfig, Cache, InferError, Paradigm, PromptSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    /// In input order.
    pub records: Vec<PredictionRecord>,
    /// HTTP requests made, retries included.
    pub network_calls: usize,
    pub cache_hits: usize,
    pub failed: usize,
}

fn accepts_bare_labels(spec: &PromptSpec) -> bool {
    spec.paradigm != Paradigm::Finetuned || !spec.build_config.tr
}

/// Turns an answer string into a prediction for `instance`.
///
/// When no triplet can be read and the prompt did not demand triplets, the
/// answer is taken as a list of relation labels for the queried pair.
/// Under generate_then_retrieval every relation is aligned to the set.
pub fn interpret_answer(instance: &REInstance, answer: &str, spec: &PromptSpec) -> PredictionRecord {
    let mut parsed = parse(answer, ParseConfig::LENIENT).triplets;
    if parsed.is_empty() && accepts_bare_labels(spec) {
        parsed = answer
            .split([',', '，', '、', '\n'])
            .map(|s| s.trim_matches(|c: char| c.is_whitespace() || c == '。' || c == '.'))
            .filter(|s| !s.is_empty())
            .filter_map(|r| RelationTriplet::new(instance.head.surface(), r, instance.tail.surface()).ok())
            .collect();
    }
    let mut rec = PredictionRecord::new(instance.id.clone(), answer, parsed);
    if spec.paradigm == Paradigm::GenerateThenRetrieval {
        if let Some(set) = &spec.relation_set {
            let scorer = default_scorer();
            rec.aligned_relations = rec
                .parsed
                .iter()
                .filter_map(|t| align(&t.relation, set, &scorer, 1).ok())
                .map(|a| AlignedLabel {
                    label: a.best,
                    exact: a.exact,
                })
                .collect();
        }
    }
    rec
}

pub fn run_batch(
    instances: &[REInstance],
    spec: &PromptSpec,
    backend: &BackendConfig,
    cache_dir: &Path,
) -> Result<RunSummary, InferError> {
    run_batch_to(instances, spec, backend, cache_dir, io::sink())
}

/// Like [`run_batch`], also writing each record to `out` as soon as every
/// record before it is done.
pub fn run_batch_to<W: Write>(
    instances: &[REInstance],
    spec: &PromptSpec,
    backend: &BackendConfig,
    cache_dir: &Path,
    mut out: W,
) -> Result<RunSummary, InferError> {
    spec.validate()?;
    backend.validate()?;
    if spec.paradigm == Paradigm::GenerateThenRetrieval && spec.relation_set.is_none() {
        return Err(InferError::Spec(
            "generate_then_retrieval needs a relation set to align answers against".into(),
        ));
    }
    let prompts = instances
        .iter()
        .map(|i| build_prompt(i, spec))
        .collect::<Result<Vec<_>, _>>()?;
    let cache = Cache::open(cache_dir)?;
    let http = HttpBackend::new(backend);

    let next = AtomicUsize::new(0);
    let calls = AtomicUsize::new(0);
    let hits = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);

    let process = |i: usize| -> Result<PredictionRecord, InferError> {
        let inst = &instances[i];
        let key = cache_key(&prompts[i], backend);
        let body = match cache.get(&key) {
            Some(body) => {
                hits.fetch_add(1, Ordering::Relaxed);
                body
            }
            None => {
                let (res, attempts) = http.call(&prompts[i]);
                calls.fetch_add(attempts, Ordering::Relaxed);
                match res {
                    Ok(body) => {
                        cache.put(&key, &body).map_err(|source| InferError::CacheUnwritable {
                            path: cache_dir.to_path_buf(),
                            source,
                        })?;
                        body
                    }
                    Err(msg) => return Ok(PredictionRecord::failed(inst.id.clone(), msg)),
                }
            }
        };
        Ok(match extract_answer(&body, backend.wire) {
            Ok(answer) => interpret_answer(inst, &answer, spec),
            Err(msg) => PredictionRecord::failed(inst.id.clone(), msg),
        })
    };

    let n = instances.len();
    let workers = backend.parallelism.min(n).max(1);
    let (tx, rx) = mpsc::channel::<(usize, Result<PredictionRecord, InferError>)>();
    let mut records = Vec::with_capacity(n);
    let mut first_err: Option<InferError> = None;
    thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort, process) = (&next, &abort, &process);
            s.spawn(move || {
                while !abort.load(Ordering::Relaxed) {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n || tx.send((i, process(i))).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        for (i, res) in rx {
            match res {
                Ok(rec) => {
                    pending.insert(i, rec);
                }
                Err(e) => {
                    abort.store(true, Ordering::Relaxed);
                    first_err.get_or_insert(e);
                }
            }
            while let Some(rec) = pending.remove(&records.len()) {
                if first_err.is_none() {
                    if let Err(e) = out.write_all(write_run_line(&rec).as_bytes()).and_then(|_| out.flush()) {
                        abort.store(true, Ordering::Relaxed);
                        first_err = Some(e.into());
                    }
                }
                records.push(rec);
            }
        }
    });
    if let Some(e) = first_err {
        return Err(e);
    }
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    Ok(RunSummary {
        records,
        network_calls: calls.into_inner(),
        cache_hits: hits.into_inner(),
        failed,
    })
}
