use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use dscre_core::eval::{self, EvalOptions, EvalReport, ReportFile};
use dscre_core::ingest::{self, DatasetManifest, Fraction, SplitName};
use dscre_core::instruct::{self, BuildConfig, DEFAULT_INSTRUCTION};
use dscre_core::{align, default_scorer, parse, ParseConfig, REInstance, RelationSet};
use dscre_infer::{BackendConfig, InferError, Paradigm, PromptSpec, WireFormat, DEFAULT_SINGLE_WORD_REQUEST};
use dscre_lora::{copy_task, lora_forward, merge, DecoderConfig, LoraError, SequenceExample, ToyDecoder64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Settings;
use crate::{pair, Cli, CliError, Command, Knobs};

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Env(format!("cannot write {}: {e}", path.display())))
}

fn write_err(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Env(format!("writing {}: {e}", path.display()))
}

struct Ctx {
    settings: Settings,
    verbose: bool,
}

impl Ctx {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn announce(&self, command: &str) -> String {
        let h = self.settings.hash(command);
        eprintln!("config hash: {h}");
        h
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut ctx = Ctx {
        settings: Settings::load(cli.config.as_deref())?,
        verbose: cli.verbose,
    };
    match cli.command {
        Command::Build {
            dataset,
            split,
            knobs,
            out,
        } => build(&mut ctx, &dataset, &split, knobs, &out),
        Command::Sample { input, fraction, out } => sample(&mut ctx, cli.seed, &input, &fraction, &out),
        Command::Infer {
            dataset,
            split,
            paradigm,
            relation_set,
            backend_url,
            model,
            cache,
            out,
            temperature,
            max_tokens,
            timeout_secs,
            max_retries,
            parallelism,
            wire,
            knobs,
        } => {
            let s = &mut ctx.settings;
            let build_config = build_config(s, knobs)?;
            let paradigm: Paradigm = s
                .string("paradigm", paradigm, Some("finetuned"))?
                .unwrap()
                .parse()
                .map_err(usage)?;
            let relation_set = s
                .string("relation_set", relation_set.map(path_string), None)?
                .map(PathBuf::from);
            let timeout = s.real("timeout_secs", timeout_secs, 60.0)?;
            if !(timeout.is_finite() && timeout > 0.0) {
                return Err(usage("timeout_secs must be positive"));
            }
            let backend = BackendConfig {
                base_url: s
                    .string("backend_url", backend_url, Some("http://127.0.0.1:8000/v1"))?
                    .unwrap(),
                model_name: s.require("model", model)?,
                temperature: s.real("temperature", temperature, 0.0)?,
                max_tokens: u32::try_from(s.integer("max_tokens", max_tokens, 128)?).map_err(usage)?,
                timeout: Duration::from_secs_f64(timeout),
                max_retries: u32::try_from(s.integer("max_retries", max_retries, 3)?).map_err(usage)?,
                parallelism: s.integer("parallelism", parallelism, 4)? as usize,
                api_key_env: s.string("api_key_env", None, Some("DSCRE_API_KEY"))?.unwrap(),
                wire: s
                    .string("wire", wire, Some("chat"))?
                    .unwrap()
                    .parse::<WireFormat>()
                    .map_err(usage)?,
                system_prompt: s.string("system_prompt", None, None)?,
                ..Default::default()
            };
            let single_word_request = s
                .string("single_word_request", None, Some(DEFAULT_SINGLE_WORD_REQUEST))?
                .unwrap();
            let cache = PathBuf::from(
                s.string("cache", cache.map(path_string), Some(".dscre-cache"))?
                    .unwrap(),
            );
            s.note("dataset", path_string(dataset.clone()));
            s.note("split", split.as_str());
            let job = InferJob {
                dataset,
                split,
                paradigm,
                relation_set,
                build_config,
                single_word_request,
                backend,
                cache,
                out,
            };
            infer(&ctx, job)
        }
        Command::Eval {
            gold,
            run,
            relation_set,
            exclude_na,
            report,
        } => evaluate(&mut ctx, &gold, &run, &relation_set, exclude_na, report.as_deref()),
        Command::Compare {
            gold,
            relation_set,
            runs,
            exclude_na,
        } => compare(&mut ctx, &gold, &relation_set, &runs, exclude_na),
        Command::LoraDemo { steps, d, k, rank, lr } => lora_demo(&mut ctx, cli.seed, steps, d, k, rank, lr),
        Command::Parse { text, strict } => parse_cmd(text, strict),
        Command::Align {
            relation,
            relation_set,
            top,
        } => align_cmd(&relation, &relation_set, top),
    }
}

fn path_string(p: PathBuf) -> String {
    p.to_string_lossy().into_owned()
}

fn build_config(s: &mut Settings, knobs: Knobs) -> Result<BuildConfig, CliError> {
    Ok(BuildConfig {
        instruction_text: s
            .string("instruction", knobs.instruction, Some(DEFAULT_INSTRUCTION))?
            .unwrap(),
        em: s.boolean("em", pair(knobs.em, knobs.no_em), true)?,
        at: s.boolean("at", pair(knobs.at, knobs.no_at), true)?,
        tr: s.boolean("tr", pair(knobs.tr, knobs.no_tr), true)?,
        ..BuildConfig::default()
    })
}

fn load_split(manifest: &Path, split: &str) -> Result<(DatasetManifest, Vec<REInstance>), CliError> {
    let split: SplitName = split.parse().map_err(usage)?;
    let m = DatasetManifest::load(manifest).map_err(usage)?;
    let loaded = ingest::load_split(&m, split).map_err(usage)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    Ok((m, loaded.instances))
}

fn build(ctx: &mut Ctx, dataset: &Path, split: &str, knobs: Knobs, out: &Path) -> Result<(), CliError> {
    let cfg = build_config(&mut ctx.settings, knobs)?;
    ctx.settings.note("dataset", dataset.to_string_lossy().as_ref());
    ctx.settings.note("split", split);
    ctx.announce("build");
    let (_, instances) = load_split(dataset, split)?;
    let examples = match instruct::build_dataset_all(&instances, &cfg) {
        Ok(ex) => ex,
        Err(errs) => {
            for e in &errs {
                eprintln!("{e}");
            }
            return Err(CliError::Usage(format!(
                "{} instance(s) could not be built",
                errs.len()
            )));
        }
    };
    let mut w = create(out)?;
    instruct::write_dataset(&examples, &mut w)
        .and_then(|_| w.flush())
        .map_err(write_err(out))?;
    println!("wrote {} examples to {}", examples.len(), out.display());
    Ok(())
}

fn sample(ctx: &mut Ctx, seed: Option<u64>, input: &Path, fraction: &str, out: &Path) -> Result<(), CliError> {
    let seed = ctx.settings.integer("seed", seed, 0)?;
    let f: Fraction = fraction.parse().map_err(usage)?;
    ctx.settings.note("fraction", fraction);
    ctx.settings.note("input", input.to_string_lossy().as_ref());
    ctx.announce("sample");
    let data = ingest::read_canonical_file(input).map_err(usage)?;
    let picked = ingest::sample_fraction(&data, f, seed);
    let mut w = create(out)?;
    ingest::write_canonical(&picked, &mut w)
        .and_then(|_| w.flush())
        .map_err(write_err(out))?;
    println!("sampled {} of {} instances", picked.len(), data.len());
    Ok(())
}

struct InferJob {
    dataset: PathBuf,
    split: String,
    paradigm: Paradigm,
    relation_set: Option<PathBuf>,
    build_config: BuildConfig,
    single_word_request: String,
    backend: BackendConfig,
    cache: PathBuf,
    out: PathBuf,
}

fn infer(ctx: &Ctx, job: InferJob) -> Result<(), CliError> {
    ctx.announce("infer");
    let (manifest, instances) = load_split(&job.dataset, &job.split)?;
    let set = match &job.relation_set {
        Some(p) => Some(ingest::load_relation_set(p).map_err(usage)?),
        None => manifest.relation_set().map_err(usage)?,
    };
    let mut spec = PromptSpec::new(job.paradigm, job.build_config, set);
    spec.single_word_request = job.single_word_request;
    let mut w = create(&job.out)?;
    let summary =
        dscre_infer::run_batch_to(&instances, &spec, &job.backend, &job.cache, &mut w).map_err(|e| match e {
            InferError::CacheUnwritable { .. } | InferError::Io(_) => CliError::Env(e.to_string()),
            _ => usage(e),
        })?;
    ctx.log(format!(
        "{} requests, {} cache hits",
        summary.network_calls, summary.cache_hits
    ));
    let n = summary.records.len();
    println!(
        "wrote {n} records to {} ({} failed, {} from cache)",
        job.out.display(),
        summary.failed,
        summary.cache_hits
    );
    if summary.failed > 0 && summary.failed + summary.cache_hits >= n {
        let first = summary.records.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(CliError::Env(format!(
            "backend unusable, every request failed; first error: {first}"
        )));
    }
    Ok(())
}

fn score(gold: &Path, run: &Path, set: &RelationSet, exclude_na: bool) -> Result<EvalReport, CliError> {
    let gold = ingest::read_canonical_file(gold).map_err(usage)?;
    let text = std::fs::read_to_string(run).map_err(|e| usage(format!("{}: {e}", run.display())))?;
    let records = eval::parse_run(&text).map_err(|(line, e)| usage(format!("{} line {line}: {e}", run.display())))?;
    let pairs = eval::pair_by_id(&gold, &records).map_err(usage)?;
    eval::aggregate(&pairs, set, EvalOptions { exclude_na }).map_err(usage)
}

fn evaluate(
    ctx: &mut Ctx,
    gold: &Path,
    run: &Path,
    relation_set: &Path,
    exclude_na: bool,
    report: Option<&Path>,
) -> Result<(), CliError> {
    let exclude_na = ctx.settings.boolean("exclude_na", exclude_na.then_some(true), false)?;
    ctx.settings.note("gold", gold.to_string_lossy().as_ref());
    ctx.settings.note("run", run.to_string_lossy().as_ref());
    let hash = ctx.announce("eval");
    let set = ingest::load_relation_set(relation_set).map_err(usage)?;
    let rep = score(gold, run, &set, exclude_na)?;
    println!("{}", rep.headline());
    println!("errors: {} of {} instances", rep.n_errors, rep.n_instances);
    for line in rep.taxonomy_lines() {
        println!("  {line}");
    }
    if ctx.verbose {
        for (label, s) in &rep.per_label {
            eprintln!("{label}\ttp {} fp {} fn {}", s.tp, s.fp, s.fn_);
        }
    }
    if let Some(path) = report {
        let file = ReportFile {
            toolkit_version: dscre_core::VERSION.to_string(),
            config_hash: hash,
            report: rep,
        };
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &file)
            .map_err(io::Error::from)
            .and_then(|_| writeln!(w))
            .and_then(|_| w.flush())
            .map_err(write_err(path))?;
    }
    Ok(())
}

fn compare(ctx: &mut Ctx, gold: &Path, relation_set: &Path, runs: &[String], exclude_na: bool) -> Result<(), CliError> {
    let exclude_na = ctx.settings.boolean("exclude_na", exclude_na.then_some(true), false)?;
    ctx.settings.note("runs", runs.join(";"));
    ctx.announce("compare");
    let set = ingest::load_relation_set(relation_set).map_err(usage)?;
    let mut reports = Vec::new();
    for r in runs {
        let (name, path) = r
            .split_once('=')
            .ok_or_else(|| usage(format!("--run expects name=path, got {r:?}")))?;
        reports.push((name.to_string(), score(gold, Path::new(path), &set, exclude_na)?));
    }
    print!("{}", eval::compare_runs(&reports).map_err(usage)?.to_text());
    Ok(())
}

fn lora_demo(
    ctx: &mut Ctx,
    seed: Option<u64>,
    steps: Option<u64>,
    d: Option<u64>,
    k: Option<u64>,
    rank: Option<u64>,
    lr: Option<f64>,
) -> Result<(), CliError> {
    let s = &mut ctx.settings;
    let seed = s.integer("seed", seed, 0)?;
    let steps = s.integer("steps", steps, 200)?;
    let cfg = DecoderConfig {
        head_dim: s.integer("d", d, 6)? as usize,
        model_dim: s.integer("k", k, 8)? as usize,
        rank: s.integer("rank", rank, 2)? as usize,
        ..DecoderConfig::default()
    };
    let lr = s.real("lr", lr, 0.5)?;
    ctx.announce("lora-demo");
    let lora_err = |e: LoraError| match e {
        LoraError::Rank { rank, limit } => usage(format!("rank {rank} must be below min(d, k) = {limit}")),
        other => usage(other),
    };
    let vocab = ["a", "b", "c"];
    let batch = copy_task(&vocab);
    let mut dec = ToyDecoder64::new(&vocab, &cfg, seed).map_err(lora_err)?;
    println!("trainable parameters: {}", dec.trainable_params());
    println!("step 0 loss {:.6}", dec.loss(&batch).map_err(lora_err)?);
    let every = (steps / 10).max(1);
    for step in 1..=steps {
        dec.train_step(&batch, lr).map_err(lora_err)?;
        if step % every == 0 || step == steps {
            println!("step {step} loss {:.6}", dec.loss(&batch).map_err(lora_err)?);
        }
    }
    let probe = SequenceExample::new(&["a"], &["b", "c"], &["c", "a"]);
    let gc = dec.grad_check(&probe, 1e-5).map_err(lora_err)?;
    println!("grad check max relative error {gc:.3e}");

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut residual = 0.0f64;
    for (w0, ad) in [(&dec.weights().wq, dec.lora_q()), (&dec.weights().wv, dec.lora_v())] {
        let merged = merge(w0, ad).map_err(lora_err)?;
        for _ in 0..16 {
            let x: Vec<f64> = (0..cfg.model_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = lora_forward(w0, ad, &x).map_err(lora_err)?;
            let b = merged.matvec(&x).map_err(lora_err)?;
            residual = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(residual, f64::max);
        }
    }
    println!("merge residual {residual:.3e}");
    Ok(())
}

fn parse_cmd(text: Option<String>, strict: bool) -> Result<(), CliError> {
    let text = match text {
        Some(t) => t,
        None => {
            let mut buf = String::new();
            io::stdin()
                .read_to_string(&mut buf)
                .map_err(|e| CliError::Env(format!("reading standard input: {e}")))?;
            buf
        }
    };
    let cfg = if strict {
        ParseConfig::STRICT
    } else {
        ParseConfig::LENIENT
    };
    let out = parse(&text, cfg);
    for t in &out.triplets {
        println!("{t}");
    }
    for d in &out.diagnostics {
        eprintln!("at {}: {}", d.position, d.message);
    }
    if strict && !out.diagnostics.is_empty() {
        return Err(usage("answer does not follow the triplet grammar"));
    }
    Ok(())
}

fn align_cmd(relation: &str, relation_set: &Path, top: usize) -> Result<(), CliError> {
    let set = ingest::load_relation_set(relation_set).map_err(usage)?;
    let res = align(relation, &set, &default_scorer(), top.min(set.len()).max(1)).map_err(usage)?;
    for (label, score) in &res.ranked {
        println!("{label}\t{score:.4}");
    }
    if res.exact {
        eprintln!("exact match");
    }
    Ok(())
}
