#![allow(dead_code)]

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ebgolf::ingest::write_shots_csv;
use ebgolf::simlab::{generate_cohort, HolesSpec, NoiseSpec, SyntheticConfig};
use ebgolf::Category;

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ebgolf"));
    cmd.env("EBGOLF_LOG", "warn");
    cmd.env_remove("EBGOLF_CONFIG");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

/// Shot-level CSV with the same synthetic golfers in every category.
pub fn write_fixture(path: &Path, n_golfers: usize, holes: HolesSpec, seed: u64) {
    let mut shots = Vec::new();
    for (k, &category) in Category::ALL.iter().enumerate() {
        let cfg = SyntheticConfig {
            category,
            n_golfers,
            holes,
            mu_s: 0.0,
            tau2_s: 0.01,
            sigma2: NoiseSpec::Fixed { sigma2: 0.3 },
            null_fraction: 0.0,
            seed: seed + k as u64,
        };
        shots.extend(generate_cohort(&cfg, 0).unwrap().shots());
    }
    let file = BufWriter::new(File::create(path).unwrap());
    write_shots_csv(file, &shots).unwrap();
}

/// Relative path and contents of every file under `root`, sorted by path.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
