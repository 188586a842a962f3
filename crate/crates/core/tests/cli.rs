use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rainfuse::products::{read_holdout, Stream};

fn rainfuse(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rainfuse"))
        .args(args)
        .arg("--config")
        .arg(config)
        .env("RAINFUSE_THREADS", "1")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let text = format!(
        r#"seed = 3

[grid]
nx = 6
ny = 5
T = 2

[paths]
data_dir = "data"
output_dir = "out/nested"

[model]
preset = "model1"

[sampler]
n_iter = 200
burn_in = 100
thin = 5
adapt_end = 80

[coverage]
replicates = 4

{extra}
"#
    );
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_creates_missing_directories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = rainfuse(&cfg, &["simulate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["gage.csv", "radar.csv", "aws.csv", "dem.csv", "truth_Y.csv", "truth_params.csv"] {
        assert!(dir.path().join("data").join(f).exists(), "{f}");
    }
}

#[test]
fn invalid_grid_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let text = fs::read_to_string(&cfg).unwrap().replace("nx = 6", "nx = 1");
    fs::write(&cfg, text).unwrap();
    let o = rainfuse(&cfg, &["simulate"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nx"), "{}", stderr(&o));
    // nothing was written before the check failed
    assert!(!dir.path().join("data").exists());
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[holdout]\nfractoin = 0.1\n");
    let o = rainfuse(&cfg, &["simulate"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("fractoin"), "{}", stderr(&o));
}

#[test]
fn missing_config_is_an_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_rainfuse")).arg("fit").output().unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--config"));
}

#[test]
fn predict_without_trace_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    assert!(rainfuse(&cfg, &["simulate"]).status.success());
    let o = rainfuse(&cfg, &["predict"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("trace"), "{}", stderr(&o));
}

#[test]
fn fit_predict_without_holdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    assert!(rainfuse(&cfg, &["simulate"]).status.success());
    let o = rainfuse(&cfg, &["fit"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out/nested");
    assert!(out.join("trace.csv").exists() && out.join("report.json").exists());
    let names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(!names.iter().any(|n| n.starts_with("holdout") || n.starts_with("coverage")), "{names:?}");

    let o = rainfuse(&cfg, &["predict"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for t in 0..2 {
        for f in [format!("rainmap_t{t}.csv"), format!("probmap_t{t}.csv"), format!("rainmap_t{t}.pgm")] {
            assert!(out.join(&f).exists(), "{f}");
        }
    }
    assert!(!out.join("rainmap_t2.csv").exists());
    let dic = fs::read_to_string(out.join("dic.txt")).unwrap();
    assert!(dic.contains("DIC") && dic.contains("D_bar") && dic.contains("p_D"));
    let header = fs::read_to_string(out.join("rainmap_t0.csv")).unwrap();
    assert!(header.starts_with("x,y,mean,median,q025,q975"));

    // validate needs hold-out files
    assert!(!rainfuse(&cfg, &["validate"]).status.success());
}

#[test]
fn repeated_holdout_writes_one_pair_per_repetition() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[holdout]\nfraction = 0.1\nrepetitions = 10\n\n[simulate]\nn_gages = 102\ngage_layout = \"regular\"\nforce_rain = true\n",
    );
    let text = fs::read_to_string(&cfg).unwrap().replace("nx = 6\nny = 5", "nx = 12\nny = 10");
    fs::write(&cfg, text).unwrap();
    assert!(rainfuse(&cfg, &["simulate"]).status.success());
    let o = rainfuse(&cfg, &["fit"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out/nested");
    for r in 0..10 {
        let h = read_holdout(&out.join(format!("holdout_r{r}.csv"))).unwrap();
        let gages = h.iter().filter(|x| x.stream == Stream::Gage).count();
        // 10% of 204 zero-free gage readings
        assert_eq!(gages, 20, "rep {r}");
        assert!(out.join(format!("coverage_r{r}.csv")).exists());
    }
    assert!(!out.join("holdout_r10.csv").exists());

    let o = rainfuse(&cfg, &["validate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(out.join("coverage_report.csv")).unwrap();
    assert!(report.lines().any(|l| l.starts_with("pooled,gage")), "{report}");
    assert!(report.lines().any(|l| l.starts_with("pooled,radar")), "{report}");

    // a missing repetition is a mismatch
    fs::remove_file(out.join("coverage_r3.csv")).unwrap();
    assert!(!rainfuse(&cfg, &["validate"]).status.success());
}

#[test]
fn seed_flag_changes_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    assert!(rainfuse(&cfg, &["simulate"]).status.success());
    let a = fs::read(dir.path().join("data/radar.csv")).unwrap();
    assert!(rainfuse(&cfg, &["simulate"]).status.success());
    assert_eq!(a, fs::read(dir.path().join("data/radar.csv")).unwrap());
    assert!(rainfuse(&cfg, &["simulate", "--seed", "99"]).status.success());
    assert_ne!(a, fs::read(dir.path().join("data/radar.csv")).unwrap());
}

#[test]
fn help_documents_config_keys() {
    let o = Command::new(env!("CARGO_BIN_EXE_rainfuse")).arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    for key in ["nx", "output_dir", "preset", "n_iter", "fraction", "repetitions", "log_floor"] {
        assert!(text.contains(key), "{key}");
    }
}
