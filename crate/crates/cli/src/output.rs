//! Deterministic tables and documents written by the subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use mfgame::scenario_tree::{AdaptedProcess, ScenarioTree};

pub struct OutputDir {
    root: PathBuf,
    csv: bool,
    json: bool,
}

impl OutputDir {
    pub fn create(root: PathBuf, formats: &[String]) -> Result<Self> {
        fs::create_dir_all(&root).with_context(|| format!("cannot create {}", root.display()))?;
        let has = |f: &str| formats.iter().any(|x| x.eq_ignore_ascii_case(f));
        Ok(Self { root, csv: has("csv"), json: has("json") })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn csv(&self, name: &str, contents: &str) -> Result<()> {
        if self.csv {
            write(&self.root.join(name), contents)?;
        }
        Ok(())
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        if self.json {
            let mut text = serde_json::to_string_pretty(value)?;
            text.push('\n');
            write(&self.root.join(name), &text)?;
        }
        Ok(())
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

/// Long table `node_id,time,player,coord,A_value,dA`.
pub fn equilibrium_csv(tree: &ScenarioTree, profile: &[AdaptedProcess]) -> String {
    let mut out = String::from("node_id,time,player,coord,A_value,dA\n");
    let increments: Vec<AdaptedProcess> = profile.iter().map(|a| a.increments(tree)).collect();
    for id in 0..tree.len() {
        for (i, (a, da)) in profile.iter().zip(&increments).enumerate() {
            for c in 0..a.dims() {
                let _ = writeln!(out, "{id},{},{i},{c},{:.12e},{:.12e}", tree.time_of(id), a.get(id, c), da.get(id, c));
            }
        }
    }
    out
}

pub fn costs_csv(costs: &[f64]) -> String {
    let mut out = String::from("player,cost\n");
    for (i, c) in costs.iter().enumerate() {
        let _ = writeln!(out, "{i},{c:.12e}");
    }
    out
}
