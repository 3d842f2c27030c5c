mod common;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use common::{config_hash, core_fixture, dscre, stderr, stdout, Stub};
use dscre_core::instruct::{self, Ablation, BuildConfig};
use dscre_core::{ingest, REInstance};
use dscre_infer::{build_prompt, Paradigm, PromptSpec};

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn finre_train() -> Vec<REInstance> {
    let m = ingest::DatasetManifest::load(&core_fixture("finre.json")).unwrap();
    ingest::load_split(&m, ingest::SplitName::Train).unwrap().instances
}

fn expected_build(cfg: &BuildConfig) -> String {
    let built = instruct::build_dataset(&finre_train(), cfg).unwrap();
    let mut buf = Vec::new();
    instruct::write_dataset(&built, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn build_variants_follow_the_flags() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = core_fixture("finre.json");
    let cases: [(&[&str], Ablation); 4] = [
        (&[], Ablation::Full),
        (&["--no-em"], Ablation::WithoutEm),
        (&["--no-at", "--no-tr"], Ablation::WithoutAtTr),
        (&["--no-tr", "--tr", "--no-at"], Ablation::WithoutAt),
    ];
    for (flags, ablation) in cases {
        let out = dir.path().join("built.json");
        let mut args = vec!["build", "--dataset", s(&manifest), "--split", "train", "--out", s(&out)];
        args.extend_from_slice(flags);
        let o = dscre(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(stdout(&o).trim(), format!("wrote 12 examples to {}", out.display()));
        let want = expected_build(&ablation.apply(&BuildConfig::default()));
        assert_eq!(fs::read_to_string(&out).unwrap(), want, "{flags:?}");
    }
}

#[test]
fn build_rejects_an_unknown_split_and_bad_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.json");
    let o = dscre(&[
        "build",
        "--dataset",
        s(&core_fixture("finre.json")),
        "--split",
        "test",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));

    let data = dir.path().join("bad.jsonl");
    fs::write(
        &data,
        "{\"id\":\"ok\",\"sentence\":\"甲和乙\",\"head\":\"甲\",\"tail\":\"乙\",\"relations\":[\"NA\"]}\n\
         {\"id\":\"broken\",\"sentence\":\"甲和乙\",\"head\":\"丙\",\"tail\":\"乙\",\"relations\":[\"NA\"]}\n",
    )
    .unwrap();
    let m = dir.path().join("m.json");
    fs::write(&m, r#"{"name":"bad","splits":{"test":"bad.jsonl"}}"#).unwrap();
    let o = dscre(&["build", "--dataset", s(&m), "--split", "test", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("broken"), "{}", stderr(&o));
}

#[test]
fn sample_is_seeded_and_checks_the_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let input = core_fixture("finre_train.jsonl");
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out in [&a, &b] {
        let o = dscre(&[
            "sample",
            "--in",
            s(&input),
            "--fraction",
            "0.5",
            "--seed",
            "9",
            "--out",
            s(out),
        ]);
        assert!(o.status.success());
        assert_eq!(stdout(&o).trim(), "sampled 6 of 12 instances");
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let o = dscre(&["sample", "--in", s(&input), "--fraction", "0", "--out", s(&a)]);
    assert_eq!(o.status.code(), Some(2));
    let o = dscre(&["sample", "--in", s(&input), "--fraction", "120%", "--out", s(&a)]);
    assert_eq!(o.status.code(), Some(2));
}

/// Stub that answers every finetuned prompt with the gold output.
fn gold_stub() -> Stub {
    let spec = PromptSpec::new(Paradigm::Finetuned, BuildConfig::default(), None);
    let answers: HashMap<String, String> = finre_train()
        .iter()
        .map(|i| {
            (
                build_prompt(i, &spec).unwrap(),
                instruct::render_output(i, &BuildConfig::default()),
            )
        })
        .collect();
    Stub::start(move |p| match answers.get(p) {
        Some(a) => (200, a.clone()),
        None => (404, "unknown prompt".into()),
    })
}

fn infer_args<'a>(url: &'a str, cache: &'a Path, out: &'a Path, manifest: &'a Path) -> Vec<&'a str> {
    vec![
        "infer",
        "--dataset",
        s(manifest),
        "--split",
        "train",
        "--backend-url",
        url,
        "--model",
        "toy",
        "--cache",
        s(cache),
        "--out",
        s(out),
        "--parallelism",
        "3",
    ]
}

#[test]
fn infer_against_stub_matches_golden_and_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let stub = gold_stub();
    let manifest = core_fixture("finre.json");
    let cache = dir.path().join("cache");
    let run = dir.path().join("run.jsonl");
    let o = dscre(&infer_args(&stub.url, &cache, &run, &manifest));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stub.calls(), 12);
    let text = fs::read_to_string(&run).unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/finetuned_run.jsonl");
    if std::env::var_os("DSCRE_BLESS").is_some() {
        fs::write(&golden, &text).unwrap();
    }
    assert_eq!(text, fs::read_to_string(&golden).unwrap());

    // warm cache, backend gone
    drop(stub);
    let again = dir.path().join("again.jsonl");
    let o = dscre(&infer_args("http://127.0.0.1:9/v1", &cache, &again, &manifest));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(&again).unwrap(), text.as_bytes());

    let o = dscre(&[
        "eval",
        "--gold",
        s(&core_fixture("finre_train.jsonl")),
        "--run",
        s(&run),
        "--relation-set",
        s(&core_fixture("finre_relations.txt")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().next(), Some("P 100.00 R 100.00 F1 100.00"));
}

#[test]
fn infer_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let run = dir.path().join("run.jsonl");

    // cold cache, nothing listening
    let finre = core_fixture("finre.json");
    let mut args = infer_args("http://127.0.0.1:9/v1", &cache, &run, &finre);
    args.extend(["--max-retries", "0", "--timeout-secs", "2"]);
    let o = dscre(&args);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    // options paradigm with no relation set anywhere
    let m = dir.path().join("m.json");
    let data = core_fixture("finre_train.jsonl");
    fs::write(
        &m,
        format!(r#"{{"name":"x","splits":{{"train":{}}}}}"#, serde_json::json!(s(&data))),
    )
    .unwrap();
    let mut args = infer_args("http://127.0.0.1:9/v1", &cache, &run, &m);
    args.extend(["--paradigm", "classify_then_extract"]);
    let o = dscre(&args);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let mut args = infer_args("http://127.0.0.1:9/v1", &cache, &run, &m);
    args.extend(["--paradigm", "guess"]);
    assert_eq!(dscre(&args).status.code(), Some(2));
}

#[test]
fn eval_prints_headline_and_taxonomy_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let rs = core_fixture("finre_relations.txt");
    let o = dscre(&[
        "eval",
        "--gold",
        s(&core_fixture("metrics_gold.jsonl")),
        "--run",
        s(&core_fixture("metrics_run.jsonl")),
        "--relation-set",
        s(&rs),
        "--report",
        s(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().next(), Some("P 60.00 R 60.00 F1 60.00"));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["config_hash"], config_hash(&o).as_str());
    assert_eq!(rep["toolkit_version"], dscre_core::VERSION);
    assert_eq!(
        (rep["tp"].as_u64(), rep["fp"].as_u64(), rep["fn"].as_u64()),
        (Some(3), Some(2), Some(2))
    );

    let o = dscre(&[
        "eval",
        "--gold",
        s(&core_fixture("taxonomy_gold.jsonl")),
        "--run",
        s(&core_fixture("taxonomy_run.jsonl")),
        "--relation-set",
        s(&rs),
    ]);
    let out = stdout(&o);
    for line in [
        "errors: 30 of 30 instances",
        "  Understanding: 50.00% (15)",
        "  Multiple relations: 26.67% (8)",
        "  NA: 20.00% (6)",
        "  Nonexistent relation: 3.33% (1)",
    ] {
        assert!(out.lines().any(|l| l == line), "missing {line:?} in\n{out}");
    }

    let o = dscre(&[
        "eval",
        "--gold",
        s(&core_fixture("metrics_gold.jsonl")),
        "--run",
        s(&core_fixture("taxonomy_run.jsonl")),
        "--relation-set",
        s(&rs),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_two_runs() {
    let rs = core_fixture("finre_relations.txt");
    let gold = core_fixture("metrics_gold.jsonl");
    let run = core_fixture("metrics_run.jsonl");
    let a = format!("full={}", s(&run));
    let b = format!("again={}", s(&run));
    let o = dscre(&[
        "compare",
        "--gold",
        s(&gold),
        "--relation-set",
        s(&rs),
        "--run",
        &a,
        "--run",
        &b,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        stdout(&o),
        "Run     Precision      Recall          F1\n\
         full       60.00*      60.00*      60.00*\n\
         again      60.00*      60.00*      60.00*\n"
    );
    let o = dscre(&[
        "compare",
        "--gold",
        s(&gold),
        "--relation-set",
        s(&rs),
        "--run",
        "nameless",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn lora_demo_runs_and_validates_rank() {
    let o = dscre(&["lora-demo", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let gc: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("grad check max relative error "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(gc <= 1e-5);
    let losses: Vec<f64> = out
        .lines()
        .filter_map(|l| l.split_once(" loss ").map(|(_, v)| v.parse().unwrap()))
        .collect();
    assert_eq!(losses.len(), 11);
    assert!(losses[10] <= 0.5 * losses[0]);
    assert!(out.contains("trainable parameters: 56"));

    let o = dscre(&["lora-demo", "--steps", "0"]);
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.contains(" loss ")).count(), 1);
    assert!(out.contains("grad check"));

    let o = dscre(&["lora-demo", "--rank", "64", "--d", "8", "--k", "8"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags_and_hashed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("dscre.toml");
    fs::write(&cfg, "steps = 0\nrank = 1\nseed = 4\n").unwrap();
    let a = dscre(&["--config", s(&cfg), "lora-demo"]);
    assert!(stdout(&a).contains("trainable parameters: 28"));
    assert_eq!(stdout(&a).lines().filter(|l| l.contains(" loss ")).count(), 1);
    let b = dscre(&["--config", s(&cfg), "lora-demo", "--rank", "2"]);
    assert!(stdout(&b).contains("trainable parameters: 56"));
    assert_ne!(config_hash(&a), config_hash(&b));
    let a2 = dscre(&["--config", s(&cfg), "lora-demo"]);
    assert_eq!(config_hash(&a), config_hash(&a2));
    assert_eq!(stdout(&a), stdout(&a2));

    fs::write(&cfg, "stepz = 1\n").unwrap();
    assert_eq!(dscre(&["--config", s(&cfg), "lora-demo"]).status.code(), Some(2));
}

#[test]
fn parse_and_align_subcommands() {
    let o = dscre(&["parse", "（［双汇国际］，分析，［双汇］）"]);
    assert_eq!(stdout(&o), "([双汇国际], 分析, [双汇])\n");
    let o = dscre(&["parse", "--strict", "答案: 分析"]);
    assert_eq!(o.status.code(), Some(2));
    let o = dscre(&[
        "align",
        "拥有关系",
        "--relation-set",
        s(&core_fixture("finre_relations.txt")),
        "--top",
        "1",
    ]);
    assert_eq!(stdout(&o), "拥有\t0.5963\n");
}
