#![allow(dead_code)]

use std::fs;
use std::path::PathBuf;

use neckcut::interp::Invocation;
use neckcut::ir::{parse_program, Program};
use neckcut::neck::ProgramCategory;
use neckcut::pipeline::PipelineConfig;
use serde::Deserialize;

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

pub fn load(name: &str) -> Program {
    let text = fs::read_to_string(corpus_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    parse_program(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Entry {
    pub program: String,
    pub tag: String,
    pub category: ProgramCategory,
    pub args: Vec<String>,
    #[serde(default)]
    pub config_file: Option<String>,
}

impl Entry {
    pub fn name(&self) -> String {
        format!("{}/{}", self.program, self.tag)
    }

    pub fn stem(&self) -> &str {
        self.program.strip_suffix(".ir").unwrap_or(&self.program)
    }

    pub fn source(&self) -> Program {
        load(&self.program)
    }

    pub fn golden(&self) -> Program {
        load(&format!("{}.{}.expected.ir", self.stem(), self.tag))
    }

    pub fn config(&self) -> PipelineConfig {
        let args: Vec<&str> = self.args.iter().map(String::as_str).collect();
        let mut cfg = PipelineConfig::new(self.category, &args);
        if let Some(f) = &self.config_file {
            cfg.config_file = Some(f.clone());
            cfg.config_input = Some(fs::read(corpus_dir().join(f)).unwrap());
        }
        cfg
    }

    pub fn invocation(&self) -> Invocation {
        self.config().invocation()
    }
}

#[derive(Deserialize)]
struct Manifest {
    entries: Vec<Entry>,
}

pub fn manifest() -> Vec<Entry> {
    let text = fs::read_to_string(corpus_dir().join("manifest.json")).unwrap();
    serde_json::from_str::<Manifest>(&text).unwrap().entries
}
