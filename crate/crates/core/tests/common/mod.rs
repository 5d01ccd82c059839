#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

pub const SCHEMA_JSON: &str = r#"{
  "columns": [
    {"name": "age", "kind": "numeric"},
    {"name": "hours", "kind": "numeric"},
    {"name": "workclass", "kind": "categorical", "categories": ["Private", "Public", "Self"]},
    {"name": "sex", "kind": "categorical", "categories": ["Female", "Male"], "role": "protected"},
    {"name": "race", "kind": "categorical", "categories": ["Black", "Other", "White"], "role": "protected"},
    {"name": "income", "kind": "categorical", "categories": ["<=50K", ">50K"], "role": "label"}
  ],
  "label_column": "income",
  "favourable_label": ">50K",
  "privileged_values": {"sex": "Male", "race": "White"}
}"#;

pub struct Fixture {
    pub dir: TempDir,
    pub data: PathBuf,
    pub schema: PathBuf,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

/// Adult-shaped CSV whose label depends on age, hours and sex.
pub fn fixture_csv(rows: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("age,hours,workclass,sex,race,income\n");
    for _ in 0..rows {
        let male = rng.random_bool(0.6);
        let race = match rng.random_range(0..10) {
            0..=2 => "Black",
            3..=4 => "Other",
            _ => "White",
        };
        let age: u32 = rng.random_range(18..80);
        let hours: u32 = rng.random_range(10..70);
        let workclass = ["Private", "Public", "Self"][rng.random_range(0..3)];
        let score = 0.04 * (age as f64 - 40.0) + 0.05 * (hours as f64 - 40.0) + if male { 0.8 } else { -0.4 };
        let rich = rng.random::<f64>() < 1.0 / (1.0 + (-score).exp());
        out.push_str(&format!(
            "{age},{hours},{workclass},{},{race},{}\n",
            if male { "Male" } else { "Female" },
            if rich { ">50K" } else { "<=50K" }
        ));
    }
    out
}

pub fn fixture(rows: usize, seed: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let schema = dir.path().join("schema.json");
    std::fs::write(&data, fixture_csv(rows, seed)).unwrap();
    std::fs::write(&schema, SCHEMA_JSON).unwrap();
    Fixture { dir, data, schema }
}

/// Writes an executable shell script and returns its path.
pub fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    use std::os::unix::fs::PermissionsExt;
    let path = dir.join(name);
    std::fs::write(&path, format!("#!/bin/sh\nset -e\n{body}")).unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    path
}

/// Argument parsing shared by the protocol stubs.
pub const STUB_ARGS: &str = r#"phase=$1; shift
while [ $# -gt 0 ]; do
  case $1 in
    --data) data=$2;; --schema) schema=$2;; --model-dir) model=$2;;
    --seed) seed=$2;; --n) n=$2;; --out) out=$2;;
    *) echo "unexpected argument $1" >&2; exit 64;;
  esac
  shift 2
done
"#;

/// Fit copies the training CSV; sample emits its first `n` rows.
pub fn identity_stub(dir: &Path) -> PathBuf {
    script(
        dir,
        "identity.sh",
        &format!(
            r#"{STUB_ARGS}
case $phase in
  fit) mkdir -p "$model"; cp "$data" "$model/train.csv"; echo "fitted with seed $seed" >&2;;
  sample) head -n $((n + 1)) "$model/train.csv" > "$out";;
esac
"#
        ),
    )
}
