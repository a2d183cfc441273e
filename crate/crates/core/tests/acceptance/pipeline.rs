use std::path::Path;
use std::process::Command;

use crate::Outcome;

const BIN: &str = env!("CARGO_BIN_EXE_dlharmonize");
const SEED: &str = "31";
const REGION: &str = "2,2,2:3,3,3";

fn run(dir: &Path, threads: &str, args: &[&str]) -> Result<(), String> {
    let out = Command::new(BIN)
        .current_dir(dir)
        .env_remove("DLH_THREADS")
        .args(["--threads", threads, "--seed", SEED])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

/// Phantoms, training, harmonization, alteration, metrics and evaluation in
/// `dir`; returns the bytes of the dictionary and both reports.
fn pipeline(dir: &Path, threads: &str) -> Result<[Vec<u8>; 3], String> {
    let step = |args: &[&str]| run(dir, threads, args);
    step(&["phantom", "--shape", "8,8,8", "--dirs", "6", "--noise", "10", "--out-prefix", "a"])?;
    step(&["phantom", "--shape", "8,8,8", "--dirs", "6", "--noise", "10", "--gain", "1.2", "--out-prefix", "b"])?;
    let patch = ["--neighbors", "2"];
    let data = |s: &'static str| -> [String; 8] {
        [
            "--input".into(),
            format!("{s}.nii.gz"),
            "--bvals".into(),
            "a.bval".into(),
            "--bvecs".into(),
            "a.bvec".into(),
            "--mask".into(),
            "a_mask.nii.gz".into(),
        ]
    };
    let with = |head: &[&str], s: &'static str, tail: &[&str]| -> Vec<String> {
        head.iter()
            .map(|v| v.to_string())
            .chain(data(s))
            .chain(tail.iter().map(|v| v.to_string()))
            .collect()
    };
    let stepv = |v: Vec<String>| step(&v.iter().map(String::as_str).collect::<Vec<_>>());

    stepv(with(&["train"], "a", &[&patch[..], &["--iters", "6", "--batch", "8", "--atoms", "48", "--select", "cv", "--out", "d.dld"]].concat()))?;
    for s in ["a", "b"] {
        let alt = format!("{s}_alt.nii.gz");
        step(&["alter", "--input", &format!("{s}.nii.gz"), "--bvals", "a.bval", "--bvecs", "a.bvec", "--region", REGION, "--out", &alt])?;
    }
    for (src, out) in [("b", "h.nii.gz"), ("b_alt", "h_alt.nii.gz")] {
        stepv(with(&["harmonize", "--dictionary", "d.dld"], src, &[&patch[..], &["--out", out]].concat()))?;
    }
    for s in ["a", "a_alt", "h", "h_alt"] {
        let input = format!("{s}.nii.gz");
        step(&["metrics", "--input", &input, "--bvals", "a.bval", "--bvecs", "a.bvec", "--mask", "a_mask.nii.gz", "--out-prefix", &format!("m_{s}")])?;
    }
    let mut eval: Vec<String> = vec!["eval".into()];
    for metric in ["adc", "fa", "rish0"] {
        for (flag, s) in [("--predicted", "h"), ("--acquired", "a"), ("--predicted-altered", "h_alt"), ("--acquired-altered", "a_alt")] {
            eval.push(flag.into());
            eval.push(format!("m_{s}_{metric}.nii.gz"));
        }
        eval.push("--metric".into());
        eval.push(metric.into());
    }
    eval.extend(["--mask", "a_mask.nii.gz", "--sidecar", "b_alt.json", "--out", "r.json", "--csv", "r.csv"].map(String::from));
    stepv(eval)?;
    let read = |f: &str| std::fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}"));
    Ok([read("d.dld")?, read("r.json")?, read("r.csv")?])
}

pub fn determinism() -> Outcome {
    let runs: Result<Vec<_>, String> = ["1", "1", "4"]
        .into_iter()
        .map(|threads| {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            pipeline(dir.path(), threads)
        })
        .collect();
    match runs {
        Err(e) => Outcome::new(false, format!("pipeline failed: {e}")),
        Ok(r) => {
            let same_run = r[0] == r[1];
            let same_threads = r[0] == r[2];
            Outcome::new(
                same_run && same_threads,
                format!(
                    "dictionary {} B, report {} B: identical across runs: {same_run}, 1 vs 4 threads: {same_threads}",
                    r[0][0].len(),
                    r[0][1].len()
                ),
            )
        }
    }
}
