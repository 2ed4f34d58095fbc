#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const TOY: &str = r#"
version = 1
seed = 2024

[model]
kind = "toy-linear"
nx = 5
dt = 0.1
seed = 11

[prior]
kind = "isotropic"
variance = 1.0

[observation]
kind = "identity"

[noise]
variance = 0.01

[window]
dt = 0.1
n_steps = 3
obs_times = [0.1, 0.2, 0.3]
"#;

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn shipped_config(name: &str) -> PathBuf {
    workspace_root().join("configs").join(name)
}

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

pub fn bayesoed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bayesoed")).args(args).output().expect("binary runs")
}

/// Runs a subcommand with `--quiet` and returns the output.
pub fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--output", out.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    bayesoed(&args)
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(str::to_owned).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|f| if f.is_empty() { f64::NAN } else { f.parse().unwrap() }).collect())
        .collect();
    (header, rows)
}

pub fn result_json(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("result.json")).unwrap()).unwrap()
}

pub fn validate_bundle(bundle: &serde_json::Value) -> Result<(), String> {
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/result_bundle.schema.json");
    let schema: serde_json::Value = serde_json::from_str(&fs::read_to_string(schema_path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).map_err(|e| e.to_string())?;
    let errors: Vec<String> = validator.iter_errors(bundle).map(|e| format!("{}: {e}", e.instance_path())).collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors.join("\n"))
    }
}

/// Every file of an output directory except the timings, keyed by name.
pub fn numeric_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timings.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}
