use std::path::{Path, PathBuf};
use std::process::Command;

use tradecost::ingest::{plan_from_csv, read_panel_dir};
use tradecost_cli::manifest::Manifest;

const BIN: &str = env!("CARGO_BIN_EXE_tradecost");

const CONFIG: &str = r#"
commodity = "wheat"

[generate]
countries = 5
years = 3
noise = 0.1

[training]
epochs = 200
patience = 0

[ensemble]
n = 12

[ingest]
threshold = 1.0

[ingest.schema]
keep_self_flows = true
"#;

struct Run {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Run {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(&path, config).unwrap();
        Self { dir, config: path }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn exec(&self, args: &[&str]) -> i32 {
        let out = Command::new(BIN)
            .arg("--config")
            .arg(&self.config)
            .args(args)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        if !out.status.success() {
            eprintln!("{}", String::from_utf8_lossy(&out.stderr));
        }
        out.status.code().unwrap()
    }

    fn ok(&self, args: &[&str]) {
        assert_eq!(self.exec(args), 0, "{args:?}");
    }

    fn s(&self, rel: &str) -> String {
        self.path(rel).to_string_lossy().into_owned()
    }
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let r = Run::new(CONFIG);
    r.ok(&["--seed", "3", "--out", &r.s("gen"), "generate"]);
    let panel = r.s("gen/panel");
    r.ok(&["--out", &r.s("train"), "train", "--panel", &panel]);
    let model = r.s("train/model.json");
    r.ok(&["--out", &r.s("infer"), "infer", "--panel", &panel, "--model", &model]);
    r.ok(&["--out", &r.s("ens"), "ensemble", "--panel", &panel, "--model", &model]);
    r.ok(&["--out", &r.s("grav"), "gravity", "--panel", &panel, "--covariates", &r.s("gen/covariates.csv")]);
    r.ok(&[
        "--out",
        &r.s("cmp"),
        "compare",
        "--panel",
        &panel,
        "--ot",
        &r.s("infer/plans"),
        "--gravity",
        &r.s("grav/gravity_plans"),
    ]);
    for f in [
        "gen/truth/cost_2000.csv",
        "gen/covariates.csv",
        "gen/trade.csv",
        "train/history.csv",
        "infer/costs/exporter_2002.csv",
        "infer/costs/importer_2002.csv",
        "infer/costs/average_2002.csv",
        "infer/plans/plan_2001.csv",
        "ens/ensemble.csv",
        "ens/ensemble.json",
        "ens/ensemble_mean/cost_2000.csv",
        "grav/gravity_fit.json",
        "grav/coefficients.csv",
        "cmp/comparison.csv",
        "cmp/comparison.json",
        "cmp/scatter.csv",
    ] {
        assert!(r.path(f).is_file(), "{f}");
    }
    for d in ["gen", "train", "infer", "ens", "grav", "cmp"] {
        let dir = r.path(d);
        assert!(dir.join("config.resolved.toml").is_file());
        assert!(dir.join("timing.txt").is_file());
        let m = manifest(&dir);
        assert!(!m.outputs.is_empty());
        assert!(!m.outputs.contains_key("manifest.json"));
    }
    let csv = std::fs::read_to_string(r.path("cmp/comparison.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("wheat,ot,rmse,")));
    assert!(csv.lines().any(|l| l.starts_with("wheat,gravity,rmse,")));
    assert_eq!(manifest(&r.path("gen")).seed, 3);
}

#[test]
fn reruns_give_identical_manifests_across_thread_counts() {
    let r = Run::new(CONFIG);
    r.ok(&["--out", &r.s("gen"), "generate"]);
    let panel = r.s("gen/panel");
    r.ok(&["--threads", "1", "--out", &r.s("a"), "train", "--panel", &panel]);
    r.ok(&["--threads", "4", "--out", &r.s("b"), "train", "--panel", &panel]);
    let (a, b) = (manifest(&r.path("a")), manifest(&r.path("b")));
    assert_eq!(a.outputs["model.json"], b.outputs["model.json"]);
    assert_eq!(a.outputs["history.csv"], b.outputs["history.csv"]);
    r.ok(&["--threads", "1", "--out", &r.s("c"), "train", "--panel", &panel]);
    assert_eq!(a, manifest(&r.path("c")));
}

#[test]
fn generated_trade_file_ingests_to_the_same_panel() {
    let r = Run::new(CONFIG);
    r.ok(&["--seed", "8", "--out", &r.s("gen"), "generate"]);
    r.ok(&["--out", &r.s("ing"), "ingest", "--trade", &r.s("gen/trade.csv")]);
    let a = read_panel_dir(&r.path("gen/panel")).unwrap();
    let b = read_panel_dir(&r.path("ing/panel")).unwrap();
    assert_eq!(a.reports, b.reports);
    assert_eq!(a.country_index.countries(), b.country_index.countries());
    assert_eq!(b.provenance.source_digests.len(), 1);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(r.path("ing/ingest_report.json")).unwrap()).unwrap();
    let tot = |k: &str| report[k].as_f64().unwrap();
    assert!((tot("record_total_exports") - tot("panel_total_exports")).abs() <= 1e-9 * tot("record_total_exports"));
    assert!((tot("record_total_imports") - tot("panel_total_imports")).abs() <= 1e-9 * tot("record_total_imports"));
}

#[test]
fn single_member_ensemble_matches_inference_without_noise() {
    let r = Run::new(&format!("{}\n", CONFIG.replace("noise = 0.1", "noise = 0.0").replace("n = 12", "n = 1")));
    r.ok(&["--out", &r.s("gen"), "generate"]);
    let panel = r.s("gen/panel");
    r.ok(&["--out", &r.s("train"), "train", "--panel", &panel]);
    let model = r.s("train/model.json");
    r.ok(&["--out", &r.s("infer"), "infer", "--panel", &panel, "--model", &model]);
    r.ok(&["--out", &r.s("ens"), "ensemble", "--panel", &panel, "--model", &model]);
    assert!(!r.path("ens/ensemble.csv").exists());
    let countries = read_panel_dir(&r.path("gen/panel")).unwrap().country_index.countries().to_vec();
    for y in 2000..2003 {
        let load = |rel: String| {
            let p = r.path(&rel);
            plan_from_csv(&std::fs::read_to_string(&p).unwrap(), &countries, &p).unwrap()
        };
        let a = load(format!("ens/ensemble_mean/cost_{y}.csv"));
        let b = load(format!("infer/costs/exporter_{y}.csv"));
        assert_eq!(a, b);
    }
}

#[test]
fn failures_map_to_exit_codes() {
    let r = Run::new(CONFIG);
    assert_eq!(r.exec(&["--out", &r.s("x"), "train", "--panel", &r.s("missing")]), 2);
    assert_eq!(r.exec(&["--out", &r.s("x"), "train"]), 1);
    assert_eq!(r.exec(&["--out", &r.s("x"), "--epsilon=-1", "generate"]), 1);
    assert_eq!(r.exec(&["--out", &r.s("x"), "--bogus", "generate"]), 1);
    let bad = Run::new("[training]\nlearnin_rate = 0.1\n");
    assert_eq!(bad.exec(&["--out", &bad.s("x"), "generate"]), 1);

    let tight = Run::new(&format!("{CONFIG}\n[compare]\not_rmse_bound = 0.0\n"));
    tight.ok(&["--out", &tight.s("gen"), "generate"]);
    let panel = tight.s("gen/panel");
    tight.ok(&["--out", &tight.s("train"), "train", "--panel", &panel]);
    tight.ok(&["--out", &tight.s("infer"), "infer", "--panel", &panel, "--model", &tight.s("train/model.json")]);
    let code = tight.exec(&["--out", &tight.s("cmp"), "compare", "--panel", &panel, "--ot", &tight.s("infer/plans")]);
    assert_eq!(code, 3);
}
