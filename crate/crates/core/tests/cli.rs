use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use holefill::harness::arrayfile::{ArrayData, ArrayFile};

const SMALL: [&str; 10] = [
    "N=8",
    "m=3",
    "k0=1.5",
    "trials=6",
    "restarts=2",
    "hio_iters=40",
    "ws=3,4",
    "ns=8",
    "ms=2,3",
    "k0s=1,2",
];

fn holefill(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_holefill"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_small(cwd: &Path, cmd: &str, out: &str, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--out", out];
    for kv in SMALL.iter().chain(extra) {
        args.push("--set");
        args.push(kv);
    }
    holefill(cwd, &args)
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            files.extend(snapshot(&path));
        } else {
            files.insert(path.clone(), fs::read(&path).unwrap());
        }
    }
    files
}

fn entries(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn every_command_succeeds_and_stays_in_its_output_directory() {
    let cwd = tempfile::tempdir().unwrap();
    for cmd in [
        "recover",
        "cond-table",
        "noise-hist",
        "hio",
        "fill-hio",
        "partial-fill",
        "sweep-fig13",
    ] {
        let out = run_small(cwd.path(), cmd, "out", &[]);
        assert!(
            out.status.success(),
            "{cmd}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(summary["command"], cmd);
        assert_eq!(entries(cwd.path()), vec!["out".to_string()], "{cmd}");
        for f in summary["files"].as_array().unwrap() {
            let p = cwd.path().join(f.as_str().unwrap());
            assert!(p.starts_with(cwd.path().join("out")), "{cmd}: {}", p.display());
            assert!(p.is_file(), "{cmd}: {}", p.display());
        }
    }
}

#[test]
fn reruns_are_byte_identical() {
    let cwd = tempfile::tempdir().unwrap();
    for cmd in ["recover", "hio", "partial-fill"] {
        assert!(run_small(cwd.path(), cmd, "out", &[]).status.success());
        let first = snapshot(&cwd.path().join("out"));
        fs::remove_dir_all(cwd.path().join("out")).unwrap();
        assert!(run_small(cwd.path(), cmd, "out", &[]).status.success());
        let second = snapshot(&cwd.path().join("out"));
        assert_eq!(first, second, "{cmd}");
        fs::remove_dir_all(cwd.path().join("out")).unwrap();
    }
}

#[test]
fn artifacts_embed_config_hash_and_seed() {
    let cwd = tempfile::tempdir().unwrap();
    let out = run_small(cwd.path(), "cond-table", "out", &["seed=17"]);
    assert!(out.status.success());
    let csv = fs::read_to_string(cwd.path().join("out/cond_table.csv")).unwrap();
    let header: Vec<&str> = csv.lines().take_while(|l| l.starts_with('#')).collect();
    assert!(header.iter().any(|l| l.starts_with("# config_sha256: ")));
    assert!(header.iter().any(|l| l == &"# seed: 17"));
    assert!(header.iter().any(|l| l.starts_with("# config: {")));
    let columns = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(
        columns,
        "beta,N,m,k0,d,sigma_min,recovery_norm,bound,asymptotic,method"
    );
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cwd.path().join("out/cond_table.json")).unwrap()).unwrap();
    assert_eq!(json["seed"], 17);
    assert_eq!(json["config"]["seed"], 17);
}

#[test]
fn recover_writes_readable_arrays() {
    let cwd = tempfile::tempdir().unwrap();
    assert!(run_small(cwd.path(), "recover", "out", &[]).status.success());
    let mask = ArrayFile::from_bytes(&fs::read(cwd.path().join("out/r_mask.hfar")).unwrap()).unwrap();
    assert_eq!(mask.dims, vec![48, 48]);
    let ArrayData::F64(values) = &mask.data else {
        panic!("mask is real")
    };
    assert!(values.iter().all(|&v| v == 0.0 || v == 1.0));
    let hole = ArrayFile::from_bytes(&fs::read(cwd.path().join("out/recovered_hole.hfar")).unwrap()).unwrap();
    let withheld =
        ArrayFile::from_bytes(&fs::read(cwd.path().join("out/withheld_hole.hfar")).unwrap()).unwrap();
    assert_eq!(hole.dims, withheld.dims);
    let (ArrayData::F64(a), ArrayData::F64(b)) = (&hole.data, &withheld.data) else {
        panic!("hole arrays are real")
    };
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= 1e-9 * scale);
    }
}

#[test]
fn dry_run_prints_config_and_writes_nothing() {
    let cwd = tempfile::tempdir().unwrap();
    let out = holefill(cwd.path(), &["fill-hio", "--dry-run", "--set", "N=64", "--out", "big"]);
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["command"], "fill-hio");
    assert_eq!(json["config"]["N"], 64);
    assert_eq!(json["config_sha256"].as_str().unwrap().len(), 64);
    assert!(entries(cwd.path()).is_empty());
}

#[test]
fn config_file_is_read_and_flags_win() {
    let cwd = tempfile::tempdir().unwrap();
    fs::write(cwd.path().join("run.cfg"), "# test\nN = 12\nm = 2\nseed = 5\n").unwrap();
    let out = holefill(
        cwd.path(),
        &["recover", "--dry-run", "--config", "run.cfg", "--set", "m=4"],
    );
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["config"]["N"], 12);
    assert_eq!(json["config"]["m"], 4);
    assert_eq!(json["config"]["seed"], 5);
}

#[test]
fn exit_codes() {
    let cwd = tempfile::tempdir().unwrap();
    let bad_key = holefill(cwd.path(), &["recover", "--set", "nonsense=1"]);
    assert_eq!(bad_key.status.code(), Some(2));
    let bad_value = holefill(cwd.path(), &["recover", "--dry-run", "--set", "m=0"]);
    assert_eq!(bad_value.status.code(), Some(2));
    let missing = holefill(cwd.path(), &["recover", "--config", "absent.cfg"]);
    assert_eq!(missing.status.code(), Some(2));
    let capped = run_small(cwd.path(), "recover", "out", &["svd_cap=4"]);
    assert_eq!(capped.status.code(), Some(3));
    let degenerate = holefill(
        cwd.path(),
        &["recover", "--set", "N=8", "--set", "m=2", "--set", "k0=3.9", "--out", "out"],
    );
    assert_eq!(degenerate.status.code(), Some(3));
}
