//! Scratch project directories and a handle on the built binary.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{Map, Value};
use tempfile::TempDir;

pub const BIN: &str = env!("CARGO_BIN_EXE_absieve");

pub struct Row {
    pub title: String,
    pub abstract_text: String,
    pub human: Option<&'static str>,
    pub decision: Option<&'static str>,
}

impl Row {
    pub fn new(i: usize, human: Option<&'static str>) -> Self {
        Self {
            title: format!("Record {i} on treatment outcomes"),
            abstract_text: format!("Abstract of record {i}, a trial in adults."),
            human,
            decision: None,
        }
    }
}

/// Labelled rows: the first `n_included` are human-included.
pub fn labelled_rows(n: usize, n_included: usize) -> Vec<Row> {
    (0..n)
        .map(|i| Row::new(i, Some(if i < n_included { "included" } else { "excluded" })))
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn rows_csv(rows: &[Row]) -> String {
    let mut out = String::from("title,abstract,human_decision,decision\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            csv_field(&r.title),
            csv_field(&r.abstract_text),
            r.human.unwrap_or(""),
            r.decision.unwrap_or("")
        )
        .unwrap();
    }
    out
}

pub struct Project {
    pub dir: TempDir,
    pub config_extra: String,
}

impl Project {
    /// Manifest listing `names`, empty data dir, mock backend, no rate limit
    /// to speak of.
    pub fn new(names: &[&str]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("data")).unwrap();
        let mut manifest = String::from("Dataset Name,Inclusion Criteria,Excusion Criteria\n");
        for n in names {
            writeln!(manifest, "{n},\"Randomized trials in adults\",\"Animal studies; prophylaxis\"").unwrap();
        }
        std::fs::write(dir.path().join("manifest.csv"), manifest).unwrap();
        let p = Self {
            dir,
            config_extra: String::new(),
        };
        p.write_mock(Map::new());
        p
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn write_dataset(&self, name: &str, rows: &[Row]) {
        std::fs::write(self.path(&format!("data/{name}.csv")), rows_csv(rows)).unwrap();
    }

    /// Mock script: the given keys plus `default: excluded`.
    pub fn write_mock(&self, mut entries: Map<String, Value>) {
        entries
            .entry("default")
            .or_insert_with(|| Value::String("excluded".into()));
        std::fs::write(self.path("mock.json"), Value::Object(entries).to_string()).unwrap();
    }

    pub fn config_path(&self) -> PathBuf {
        let text = format!(
            "[backend]\nmock_script = \"mock.json\"\n\n[runner]\nrequests_per_minute = 6000000\n\
             max_retries = 2\nbackoff_base_ms = 1\n{}\n\n[paths]\n\
             manifest = \"manifest.csv\"\ndata_dir = \"data\"\noutput_dir = \"out\"\n",
            self.config_extra
        );
        let path = self.path("absieve.toml");
        std::fs::write(&path, text).unwrap();
        path
    }

    pub fn run(&self, args: &[&str]) -> Output {
        let config = self.config_path();
        Command::new(BIN)
            .arg("--config")
            .arg(&config)
            .args(args)
            .current_dir(self.dir.path())
            .env_remove("ABSIEVE_API_KEY")
            .output()
            .unwrap()
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.path(&format!("out/{rel}"))
    }

    pub fn read_out(&self, rel: &str) -> String {
        read(&self.out(rel))
    }

    pub fn json_out(&self, rel: &str) -> Value {
        serde_json::from_str(&self.read_out(rel)).unwrap()
    }
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Column `col` of a results CSV, one entry per data row.
pub fn column(csv_text: &str, col: &str) -> Vec<String> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let idx = rdr.headers().unwrap().iter().position(|h| h == col).unwrap();
    rdr.records().map(|r| r.unwrap()[idx].to_string()).collect()
}
