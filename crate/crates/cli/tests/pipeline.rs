use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn prodcomp(dir: &Path, config: &str, args: &[&str]) -> Output {
    let config_path = dir.join("run.toml");
    fs::write(&config_path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_prodcomp"))
        .current_dir(dir)
        .arg("--config")
        .arg(&config_path)
        .args(args)
        .output()
        .unwrap()
}

fn succeed(dir: &Path, config: &str, args: &[&str]) -> String {
    let out = prodcomp(dir, config, args);
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{stdout}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(stdout.lines().count(), 1, "summary should be one line: {stdout}");
    stdout
}

fn small_market(output_dir: &str) -> String {
    format!(
        r#"
seed = 5
output_dir = "{output_dir}"

[embeddings]
dims = 5

[choice]
category = "cat0"
n_draws = 10

[simulate]
n_baskets = 5000
n_consumers = 300
occasions_per_consumer = 10
"#
    )
}

fn read_tsv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').map(String::from).collect())
        .collect()
}

#[test]
fn simulated_complements_surface_in_emitted_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = "seed = 7\noutput_dir = \"out\"\n";
    for step in ["simulate", "ingest", "train", "relate"] {
        succeed(dir.path(), config, &[step]);
    }
    let out = dir.path().join("out");
    let truth = fs::read_to_string(out.join("ground_truth.tsv")).unwrap();
    let complements: Vec<(String, String)> = truth
        .lines()
        .filter_map(|l| match l.split('\t').collect::<Vec<_>>().as_slice() {
            ["pair", a, b, "complement"] => Some((a.to_string(), b.to_string())),
            _ => None,
        })
        .collect();
    assert_eq!(complements.len(), 5);

    let mut top: HashMap<String, Vec<String>> = HashMap::new();
    for row in read_tsv(&out.join("complements.tsv")) {
        top.entry(row[0].clone()).or_default().push(row[2].clone());
    }
    assert!(top.values().all(|v| v.len() == 3));
    let found = complements
        .iter()
        .filter(|(a, b)| top[a].contains(b) || top[b].contains(a))
        .count();
    assert!(found >= 4, "{found}/5 planted complements in the top-3 tables");
}

#[test]
fn fit_report_has_the_full_coefficient_schema() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_market("out");
    for step in ["simulate", "ingest", "train"] {
        succeed(dir.path(), &config, &[step]);
    }
    let summary = succeed(dir.path(), &config, &["fit"]);
    assert!(summary.starts_with("fit: embeddings,cf,scores mixed_logit"), "{summary}");

    let report = fs::read_to_string(dir.path().join("out/coefficients.tsv")).unwrap();
    let coefs: HashMap<&str, (f64, f64)> = report
        .lines()
        .filter_map(|l| match l.split('\t').collect::<Vec<_>>().as_slice() {
            ["coef", name, b, se] => Some((*name, (b.parse().unwrap(), se.parse().unwrap()))),
            _ => None,
        })
        .collect();
    for name in ["beta_bar", "sigma_beta", "delta", "lambda", "mu"] {
        let (b, se) = coefs.get(name).unwrap_or_else(|| panic!("{name} missing from\n{report}"));
        assert!(b.is_finite(), "{name} = {b}");
        assert!(!se.is_nan() || name == "sigma_beta", "{name} has no standard error");
    }
    assert!(report.contains("first_stage_coef\ttau_Z\t"));

    let summary = succeed(dir.path(), &config, &["predict"]);
    assert!(summary.contains("hit rate"), "{summary}");
    let predictions = read_tsv(&dir.path().join("out/predictions.tsv"));
    assert!(!predictions.is_empty());
    assert!(predictions.iter().all(|r| r.len() == 6 && (r[5] == "0" || r[5] == "1")));
}

#[test]
fn eval_writes_one_row_per_model() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_market("out").replace(
        "[choice]\n",
        "[choice]\neval_specs = [\"dummies\", \"embeddings,cf\"]\neval_estimators = [\"conditional_logit\"]\n",
    );
    for step in ["simulate", "ingest", "train"] {
        succeed(dir.path(), &config, &[step]);
    }
    let summary = succeed(dir.path(), &config, &["eval"]);
    assert!(summary.starts_with("eval: 2 models"), "{summary}");
    let rows = read_tsv(&dir.path().join("out/eval.tsv"));
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][0].as_str(), rows[1][0].as_str()), ("dummies", "embeddings,cf"));
    for row in &rows {
        let hit: f64 = row[10].parse().unwrap();
        assert!((0.0..=1.0).contains(&hit));
    }
}

fn artifacts(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().into(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_reproduce_artifacts_and_leave_inputs_alone() {
    let dir = tempfile::tempdir().unwrap();
    let steps = ["simulate", "ingest", "train", "relate", "fit", "predict"];
    for out in ["a", "b"] {
        for step in steps {
            succeed(dir.path(), &small_market(out), &[step]);
        }
    }
    let (a, b) = (artifacts(&dir.path().join("a")), artifacts(&dir.path().join("b")));
    assert_eq!(a.len(), 12);
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        assert!(x == y, "{} differs between runs", name.display());
    }

    // Re-running every stage in place changes nothing, inputs included.
    for step in &steps[1..] {
        succeed(dir.path(), &small_market("a"), &[step]);
    }
    assert_eq!(artifacts(&dir.path().join("a")), a);
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_market("out");
    succeed(dir.path(), &config, &["simulate", "--output-dir", "x", "--seed", "9"]);
    succeed(dir.path(), &config, &["simulate"]);
    let x = fs::read_to_string(dir.path().join("x/ground_truth.tsv")).unwrap();
    let out = fs::read_to_string(dir.path().join("out/ground_truth.tsv")).unwrap();
    assert!(x.starts_with("seed\t9\n"), "{}", &x[..20]);
    assert!(out.starts_with("seed\t5\n"));
    let summary = succeed(dir.path(), &config, &["ingest", "--threads", "1", "--input", "x/transactions.csv"]);
    assert!(summary.starts_with("ingest:"));
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = prodcomp(dir.path(), "[embeddings]\ndimensions = 8\n", &["train"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("dimensions"), "{stderr}");
}

#[test]
fn invalid_values_and_missing_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("[relatedness]\ntop_k = 0\n", "simulate", "relatedness.top_k"),
        ("[corpus]\nfractions = [0.5, 0.5, 0.5]\n", "simulate", "corpus.fractions"),
        ("[choice]\nestimator = \"probit\"\n", "simulate", "choice.estimator"),
        ("[paths]\ninput = \"missing.csv\"\n", "ingest", "missing.csv"),
    ];
    for (config, step, named) in cases {
        let out = prodcomp(dir.path(), config, &[step]);
        assert_eq!(out.status.code(), Some(2), "{config}");
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains(named), "{stderr}");
    }
}

#[test]
fn runtime_failures_exit_1_and_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    // No ingest has run, so the vocabulary is missing.
    let out = prodcomp(dir.path(), "output_dir = \"out\"\n", &["train"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("vocabulary.tsv"), "{stderr}");

    fs::write(dir.path().join("bad.csv"), "household_id,week\nh,notanumber\n").unwrap();
    let out = prodcomp(dir.path(), "[paths]\ninput = \"bad.csv\"\n", &["ingest"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bad.csv"), "{stderr}");
}

#[test]
fn fit_without_a_category_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_market("out").replace("category = \"cat0\"\n", "");
    for step in ["simulate", "ingest", "train"] {
        succeed(dir.path(), &config, &[step]);
    }
    let out = prodcomp(dir.path(), &config, &["fit"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("choice.category"));
}
