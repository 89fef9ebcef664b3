use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const THETA0: &str = r#"{"k": 1, "d": 1, "transfer": "tanh", "flat_theta": [0.0, 2.0, 1.0, 1.5]}"#;

fn mlpsel(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlpsel"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn generate(dir: &Path, n: usize) -> PathBuf {
    write(dir, "theta0.json", THETA0);
    let cfg = write(
        dir,
        "gen.toml",
        &format!("theta0 = \"theta0.json\"\nnoise_sd = 0.3\nn = {n}\nseed = 1\n[input]\nkind = \"standard_normal\"\nd = 1\n"),
    );
    let data = dir.join("data.csv");
    let o = mlpsel(&["generate"], &cfg, &data);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    data
}

#[test]
fn select_on_generated_data() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 400);
    let cfg = write(
        dir.path(),
        "select.toml",
        "data = \"data.csv\"\nmax_units = 3\nsigma2 = 0.09\npenalty = { kind = \"bic\" }\n[fit]\nseed = 2\nrestarts = 4\n",
    );
    let out = dir.path().join("sel.csv");
    let o = mlpsel(&["select", "--seed", "9"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# mlpsel "));
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "k,loglik,penalty,T_n");
    assert_eq!(rows.len(), 4);
    assert!(text.contains("# k_hat=1"), "{text}");
    assert!(text.contains("\"seed\":9"));
}

#[test]
fn fit_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 200);
    let cfg = write(dir.path(), "fit.toml", "data = \"data.csv\"\nk = 1\nsigma2 = 0.09\n[fit]\nrestarts = 3\n");
    let out = dir.path().join("fit.json");
    let o = mlpsel(&["fit"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["config"]["k"], 1);
    assert!(v["result"]["loglik"].as_f64().unwrap().is_finite());
}

#[test]
fn check_penalty_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pen.csv");
    let bic = write(dir.path(), "bic.toml", "penalty = { kind = \"bic\" }\nk_max = 4\nn_grid = [100, 1000, 10000]\n");
    assert_eq!(mlpsel(&["check-penalty"], &bic, &out).status.code(), Some(0));
    assert!(std::fs::read_to_string(&out).unwrap().contains("# diverging_gaps=true"));
    let aic = write(dir.path(), "aic.toml", "penalty = { kind = \"aic\" }\nk_max = 4\nn_grid = [100, 1000, 10000]\n");
    assert_eq!(mlpsel(&["check-penalty"], &aic, &out).status.code(), Some(4));
    assert!(std::fs::read_to_string(&out).unwrap().contains("# diverging_gaps=false"));
}

#[test]
fn gram_check_flags_duplicated_unit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "gram.toml",
        "theta0 = { k = 2, d = 1, transfer = \"tanh\", flat_theta = [0.0, 1.0, 1.0, 0.5, 0.5, 1.5, 1.5] }\nmc_samples = 2000\n[input]\nkind = \"standard_normal\"\nd = 1\n",
    );
    let out = dir.path().join("gram.csv");
    assert_eq!(mlpsel(&["gram-check"], &cfg, &out).status.code(), Some(4));
    assert!(std::fs::read_to_string(&out).unwrap().contains("# min_eigenvalue="));
}

#[test]
fn missing_data_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "select.toml", "data = \"nope.csv\"\nmax_units = 2\nsigma2 = 0.09\npenalty = { kind = \"bic\" }\n");
    let out = dir.path().join("sel.csv");
    assert_eq!(mlpsel(&["select"], &cfg, &out).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "pen.toml", "penalty = { kind = \"bic\" }\nk_max = 3\nn_grid = [10, 100]\nbogus = 1\n");
    let o = mlpsel(&["check-penalty"], &cfg, &dir.path().join("p.csv"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn generate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = std::fs::read(generate(a.path(), 50)).unwrap();
    let db = std::fs::read(generate(b.path(), 50)).unwrap();
    assert_eq!(da, db);
}
