use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use domprompt::checkpoint::load_bundle;
use domprompt::harness::{parse_table, EvalReport};
use domprompt::io::load_dataset;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_domprompt"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn domprompt")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_fails(o: &Output, code: i32) -> String {
    assert_eq!(o.status.code(), Some(code), "stderr: {}", stderr(o));
    let err = stderr(o);
    assert_eq!(err.trim_end().lines().count(), 1, "multi-line error: {err:?}");
    err
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_SPEC: &str = "\
classes = 3
seed = 11
domains = a,b,c,t
nodes = 60
p_intra = 0.2
p_inter = 0.02
feature_dim = 12
noise = 0.5
b.feature_dim = 9
c.feature_dim = 15
";

const FAST_CONFIG: &str = "\
aligned_dim = 8
hidden = 16
layers = 2
triplets_per_domain = 64
pretrain_epochs = 10
adapt_steps = 10
eval_tasks = 3
eval_seeds = 0,1
";

/// Writes the small spec and config and generates the domains.
fn small_setup(dir: &Path) -> (PathBuf, Vec<PathBuf>) {
    let spec = dir.join("spec.txt");
    fs::write(&spec, SMALL_SPEC).unwrap();
    let cfg = dir.join("exp.txt");
    fs::write(&cfg, FAST_CONFIG).unwrap();
    let data = dir.join("data");
    let o = run(&["gensynth", "--config", p(&spec), "--out", p(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifests = stdout(&o).lines().map(PathBuf::from).collect();
    (cfg, manifests)
}

#[test]
fn gensynth_writes_loadable_byte_stable_domains() {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifests) = small_setup(dir.path());
    assert_eq!(manifests.len(), 4);
    for m in &manifests {
        let ds = load_dataset(m).unwrap();
        assert_eq!(ds.graphs()[0].node_count(), 60);
    }

    let again = tempfile::tempdir().unwrap();
    small_setup(again.path());
    let mut names: Vec<_> = fs::read_dir(dir.path().join("data")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 12);
    for name in names {
        let a = fs::read(dir.path().join("data").join(&name)).unwrap();
        let b = fs::read(again.path().join("data").join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs");
    }
}

#[test]
fn gensynth_rejects_invalid_probability() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.txt");
    fs::write(&spec, SMALL_SPEC.replace("p_inter = 0.02", "p_inter = 1.2")).unwrap();
    let o = run(&["gensynth", "--config", p(&spec), "--out", p(dir.path())]);
    let err = assert_fails(&o, 2);
    assert!(err.contains("p_inter"), "{err}");
}

#[test]
fn pretrain_missing_manifest_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.manifest");
    let o = run(&["pretrain", "--source", p(&missing), "--out", p(&dir.path().join("m.ckpt"))]);
    let err = assert_fails(&o, 1);
    assert!(err.contains("nowhere.manifest"), "{err}");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifests) = small_setup(dir.path());
    let bad = dir.path().join("bad.txt");
    let ckpt = dir.path().join("m.ckpt");
    for text in ["hidden = 16\nwidth = 3\n", "hidden = -1\n", "domain_token = false\nmixing_prompt = true\n"] {
        fs::write(&bad, text).unwrap();
        let o = run(&["pretrain", "--config", p(&bad), "--source", p(&manifests[0]), "--out", p(&ckpt)]);
        assert_fails(&o, 2);
    }
    let o = run(&["pretrain", "--source", p(&manifests[0]), "--out", p(&ckpt), "--variant", "7"]);
    assert_fails(&o, 2);
    // missing required flag
    let o = run(&["pretrain", "--out", p(&ckpt)]);
    assert_fails(&o, 2);
    assert!(!ckpt.exists());
}

#[test]
fn pretrain_prints_losses_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, m) = small_setup(dir.path());
    let train = |out: &Path| {
        let o = run(&[
            "pretrain", "--config", p(&cfg), "--source", p(&m[0]), "--source", p(&m[1]), "--out", p(out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    let first = train(&a);
    let second = train(&b);
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines.len(), 10);
    for (i, line) in lines.iter().enumerate() {
        let (epoch, loss) = line.split_once('\t').unwrap();
        assert_eq!(epoch, i.to_string());
        assert!(loss.parse::<f64>().unwrap().is_finite());
    }
    assert_eq!(first.lines().last(), second.lines().last());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let bundle = load_bundle(&a).unwrap();
    assert_eq!(bundle.k(), 2);
}

#[test]
fn eval_node_and_graph_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, m) = small_setup(dir.path());
    let ckpt = dir.path().join("m.ckpt");
    let o = run(&["pretrain", "--config", p(&cfg), "--source", p(&m[0]), "--source", p(&m[1]), "--out", p(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));

    for kind in ["node", "graph"] {
        let out = dir.path().join(format!("{kind}.tsv"));
        let o = run(&[
            "eval", "--config", p(&cfg), "--checkpoint", p(&ckpt), "--target", p(&m[3]), "--kind", kind,
            "--shots", "2", "--tasks", "4", "--seeds", "3,4,5", "--out", p(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let report = EvalReport::parse_tsv(&fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(report.len(), 12);
        assert_eq!(report.seeds(), vec![3, 4, 5]);
        assert_eq!(stdout(&o).trim(), report.summary());
    }

    let out = dir.path().join("x.tsv");
    let o = run(&["eval", "--checkpoint", p(&ckpt), "--target", p(&m[3]), "--kind", "edge", "--out", p(&out)]);
    assert_fails(&o, 2);
    // a checkpoint trained with tokens cannot serve a token-free variant
    let o = run(&["eval", "--checkpoint", p(&ckpt), "--target", p(&m[3]), "--variant", "1", "--out", p(&out)]);
    assert_fails(&o, 2);
    let o = run(&["eval", "--checkpoint", p(&dir.path().join("none")), "--target", p(&m[3]), "--out", p(&out)]);
    assert_fails(&o, 1);
}

#[test]
fn ablate_modes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.txt");
    fs::write(&spec, SMALL_SPEC.replace("domains = a,b,c,t", "domains = a,b,c,d,t")).unwrap();
    let cfg = dir.path().join("exp.txt");
    fs::write(&cfg, FAST_CONFIG).unwrap();
    let o = run(&["gensynth", "--config", p(&spec), "--out", p(dir.path())]);
    assert!(o.status.success());
    let m: Vec<String> = stdout(&o).lines().map(String::from).collect();
    let mut base = vec!["--config", p(&cfg)];
    for s in &m[..4] {
        base.extend(["--source", s.as_str()]);
    }
    base.extend(["--target", m[4].as_str()]);

    let out = dir.path().join("data.txt");
    let mut args = vec!["ablate", "data"];
    args.extend(&base);
    args.extend(["--out", p(&out)]);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = parse_table(&fs::read_to_string(&out).unwrap()).unwrap();
    let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["sources=1", "sources=2", "sources=3", "sources=4"]);

    let out = dir.path().join("model.txt");
    let mut args = vec!["ablate", "model"];
    args.extend(&base);
    args.extend(["--out", p(&out)]);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = parse_table(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows[4].label.starts_with("variant=full token=1 mixing=1 unified=1"));
    assert!(rows.iter().all(|r| r.report.len() == 6));

    let out = dir.path().join("shots.csv");
    let mut args = vec!["ablate", "shots"];
    args.extend(&base);
    args.extend(["--values", "1,2", "--out", p(&out)]);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("shots,mean,std,n\n1,"));

    let mut args = vec!["ablate", "sideways"];
    args.extend(&base);
    args.extend(["--out", p(&out)]);
    assert_fails(&run(&args), 2);
}

const REFERENCE_SPEC: &str = "\
classes = 4
seed = 1
domains = s1,s2,t
nodes = 200
p_intra = 0.1
p_inter = 0.01
feature_dim = 32
noise = 1.0
s2.related_to = s1
s2.angle = 0.3
t.related_to = s1
t.angle = 0.3
";

const REFERENCE_CONFIG: &str = "\
aligned_dim = 16
hidden = 32
layers = 3
triplets_per_domain = 512
pretrain_epochs = 100
eval_tasks = 20
";

#[test]
fn end_to_end_smoke_under_a_minute() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.txt");
    fs::write(&spec, REFERENCE_SPEC).unwrap();
    let cfg = dir.path().join("exp.txt");
    fs::write(&cfg, REFERENCE_CONFIG).unwrap();
    let o = run(&["gensynth", "--config", p(&spec), "--out", p(&dir.path().join("data"))]);
    assert!(o.status.success());
    let m: Vec<String> = stdout(&o).lines().map(String::from).collect();
    let ckpt = dir.path().join("m.ckpt");
    let o = run(&["pretrain", "--config", p(&cfg), "--source", &m[0], "--source", &m[1], "--out", p(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = dir.path().join("report.tsv");
    let o = run(&[
        "eval", "--config", p(&cfg), "--checkpoint", p(&ckpt), "--target", &m[2], "--out", p(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = EvalReport::parse_tsv(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r.len(), 100);
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
}
