//! Help-text snapshots. Set `SNIC_UPDATE_SNAPSHOTS=1` to regenerate them.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

const SUBCOMMANDS: [&str; 7] = ["train", "compress", "decompress", "eval", "segment", "impact", "plot"];

fn help(sub: Option<&str>) -> String {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_snic"));
    cmd.args(sub).arg("--help");
    let out = cmd.output().expect("run snic");
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn help_texts_match_snapshots() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots");
    let update = std::env::var_os("SNIC_UPDATE_SNAPSHOTS").is_some();
    let mut names: Vec<Option<&str>> = vec![None];
    names.extend(SUBCOMMANDS.map(Some));
    for sub in names {
        let text = help(sub);
        let file = dir.join(format!("{}.txt", sub.unwrap_or("snic")));
        if update {
            fs::create_dir_all(&dir).unwrap();
            fs::write(&file, &text).unwrap();
        } else {
            let expected = fs::read_to_string(&file).unwrap_or_else(|e| panic!("{}: {e}", file.display()));
            assert_eq!(text, expected, "help of {sub:?} changed; rerun with SNIC_UPDATE_SNAPSHOTS=1 if intended");
        }
    }
}

#[test]
fn every_flag_is_documented_with_its_default() {
    let root = snic_cli::command();
    for sub in root.get_subcommands() {
        let text = help(Some(sub.get_name()));
        for arg in sub.get_arguments() {
            let Some(long) = arg.get_long() else { continue };
            // The flag's entry: its own line plus any continuation lines
            // (value lists), up to the next flag.
            let lines: Vec<&str> = text.lines().collect();
            let start = lines
                .iter()
                .position(|l| {
                    let l = l.trim_start();
                    let l = l.split_once(", ").filter(|(s, _)| s.len() == 2).map_or(l, |(_, rest)| rest);
                    l.strip_prefix(&format!("--{long}")).is_some_and(|rest| rest.is_empty() || rest.starts_with(' '))
                })
                .unwrap_or_else(|| panic!("{} --{long} missing from help", sub.get_name()));
            let end = (start + 1..lines.len()).find(|&i| {
                let l = lines[i].trim_start();
                l.starts_with('-') && lines[i].len() - l.len() <= 6
            }).unwrap_or(lines.len());
            let line = lines[start..end].join("\n");
            let documented = arg.get_help().is_some();
            assert!(documented, "{} --{long} has no description", sub.get_name());
            if let Some(default) = arg.get_default_values().first() {
                let shown = format!("[default: {}]", default.to_string_lossy());
                assert!(line.contains(&shown), "{} --{long}: {line}", sub.get_name());
            }
        }
    }
}
