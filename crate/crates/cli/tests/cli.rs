//! End-to-end subcommand tests: exit codes, validation-before-output,
//! and the behavior of each decode mode on a corrupted corpus.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ctxspike"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn ctxspike");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth_small(dir: &Path, seed: u64) {
    run_ok(bin().args([
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--utterances",
        "10",
        "--seed",
        &seed.to_string(),
    ]));
}

fn kv_value(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("missing {key} in report:\n{report}"))
        .parse()
        .unwrap()
}

#[test]
fn every_mode_beats_baseline_on_biased_errors() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path(), 5);
    let manifest = dir.path().join("manifest.json");
    let mut rates = Vec::new();
    for mode in ["baseline", "implicit", "explicit", "sf", "explicit+sf"] {
        let hyps = dir.path().join(format!("hyps_{mode}.txt"));
        run_ok(bin().args([
            "decode",
            "--manifest",
            manifest.to_str().unwrap(),
            "--mode",
            mode,
            "--out",
            hyps.to_str().unwrap(),
        ]));
        let report = run_ok(bin().args([
            "score",
            "--refs",
            dir.path().join("refs.txt").to_str().unwrap(),
            "--hyps",
            hyps.to_str().unwrap(),
            "--list",
            dir.path().join("phrases.txt").to_str().unwrap(),
            "--vocab",
            dir.path().join("vocab.txt").to_str().unwrap(),
        ]));
        rates.push((mode, kv_value(&report, "b_cer"), kv_value(&report, "u_cer")));
    }
    let baseline = rates[0].1;
    assert!(baseline > 0.0, "corrupted corpus must err at baseline");
    for &(mode, b_cer, u_cer) in &rates[1..] {
        assert!(
            b_cer < baseline,
            "{mode} B-CER {b_cer} not below baseline {baseline}"
        );
        assert!(u_cer.abs() <= 0.01, "{mode} hurt the unbiased class");
    }
}

#[test]
fn clean_corpus_baseline_decodes_to_references() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(bin().args([
        "synth",
        "--out",
        dir.path().to_str().unwrap(),
        "--utterances",
        "6",
        "--seed",
        "3",
        "--clean",
    ]));
    let hyps = dir.path().join("hyps.txt");
    run_ok(bin().args([
        "decode",
        "--manifest",
        dir.path().join("manifest.json").to_str().unwrap(),
        "--mode",
        "baseline",
        "--out",
        hyps.to_str().unwrap(),
    ]));
    let refs = std::fs::read_to_string(dir.path().join("refs.txt")).unwrap();
    let got = std::fs::read_to_string(&hyps).unwrap();
    assert_eq!(refs, got);
}

#[test]
fn traces_carry_structured_fields() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path(), 9);
    let hyps = dir.path().join("hyps.txt");
    let trace = dir.path().join("trace.jsonl");
    run_ok(bin().args([
        "decode",
        "--manifest",
        dir.path().join("manifest.json").to_str().unwrap(),
        "--mode",
        "explicit",
        "--out",
        hyps.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(&trace).unwrap();
    let mut applications = 0usize;
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["id"].as_str().unwrap().starts_with("utt"));
        assert_eq!(v["mode"], "explicit");
        assert!(v["spikes"].as_array().unwrap().len() > 0);
        assert!(v["kept_phrases"].is_array());
        applications += v["applications"].as_array().unwrap().len();
        assert!(v["combined"].is_number());
    }
    assert!(applications > 0, "explicit decode applied no bias anywhere");
}

#[test]
fn validation_failures_exit_1_without_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    // Missing manifest.
    let hyps = dir.path().join("hyps.txt");
    let out = bin()
        .args([
            "decode",
            "--manifest",
            dir.path().join("nope.json").to_str().unwrap(),
            "--mode",
            "baseline",
            "--out",
            hyps.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!hyps.exists(), "validation failure must not create outputs");

    // Unknown mode.
    synth_small(dir.path(), 1);
    let out = bin()
        .args([
            "decode",
            "--manifest",
            dir.path().join("manifest.json").to_str().unwrap(),
            "--mode",
            "turbo",
            "--out",
            hyps.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("turbo"), "{stderr}");
    assert!(!hyps.exists());

    // Bad config key.
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "not_a_key = 1\n").unwrap();
    let out = bin()
        .args([
            "decode",
            "--manifest",
            dir.path().join("manifest.json").to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            hyps.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!hyps.exists());
}

#[test]
fn config_file_drives_decode_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path(), 13);
    let manifest = dir.path().join("manifest.json");
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "manifest = \"{}\"\nmode = \"sf\"\nbeam = 6\n",
            manifest.display()
        ),
    )
    .unwrap();
    let from_config = dir.path().join("hyps_cfg.txt");
    run_ok(bin().args([
        "decode",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        from_config.to_str().unwrap(),
    ]));
    let from_flags = dir.path().join("hyps_flags.txt");
    run_ok(bin().args([
        "decode",
        "--manifest",
        manifest.to_str().unwrap(),
        "--mode",
        "sf",
        "--beam",
        "6",
        "--out",
        from_flags.to_str().unwrap(),
    ]));
    assert_eq!(
        std::fs::read(&from_config).unwrap(),
        std::fs::read(&from_flags).unwrap()
    );
    // A flag override changes the result shape (weight 0 disables SF).
    let neutered = dir.path().join("hyps_w0.txt");
    run_ok(bin().args([
        "decode",
        "--config",
        cfg.to_str().unwrap(),
        "--sf-weight",
        "0",
        "--out",
        neutered.to_str().unwrap(),
    ]));
    let base = dir.path().join("hyps_base.txt");
    run_ok(bin().args([
        "decode",
        "--manifest",
        manifest.to_str().unwrap(),
        "--mode",
        "baseline",
        "--beam",
        "6",
        "--out",
        base.to_str().unwrap(),
    ]));
    assert_eq!(std::fs::read(&neutered).unwrap(), std::fs::read(&base).unwrap());
}

#[test]
fn augment_output_is_consistent_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path(), 17);
    let out_a = dir.path().join("aug_a.jsonl");
    let out_b = dir.path().join("aug_b.jsonl");
    for (out, prob) in [(&out_a, "1.0"), (&out_b, "1.0")] {
        run_ok(bin().args([
            "augment",
            "--refs",
            dir.path().join("refs.txt").to_str().unwrap(),
            "--vocab",
            dir.path().join("vocab.txt").to_str().unwrap(),
            "--lexicon",
            dir.path().join("lexicon.tsv").to_str().unwrap(),
            "--prob",
            prob,
            "--seed",
            "21",
            "--out",
            out.to_str().unwrap(),
        ]));
    }
    assert_eq!(std::fs::read(&out_a).unwrap(), std::fs::read(&out_b).unwrap());
    for line in std::fs::read_to_string(&out_a).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let transcript: Vec<char> = v["transcript"].as_str().unwrap().chars().collect();
        let phrases = v["phrases"].as_array().unwrap();
        let occs = v["occurrences"].as_array().unwrap();
        assert_eq!(phrases.len(), occs.len());
        // Every sampled phrase occurs verbatim at its recorded span.
        for (phrase, occ) in phrases.iter().zip(occs) {
            let start = occ[0].as_u64().unwrap() as usize;
            let len = occ[1].as_u64().unwrap() as usize;
            let span: String = transcript[start..start + len].iter().collect();
            assert_eq!(phrase.as_str().unwrap(), span);
        }
        assert!(v["distractors"].as_array().unwrap().len() <= 5);
    }
}

#[test]
fn spikes_and_build_graph_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path(), 23);
    let spikes = run_ok(bin().args([
        "spikes",
        "--posterior",
        dir.path().join("utt0000.post.ctxt").to_str().unwrap(),
        "--vocab",
        dir.path().join("vocab.txt").to_str().unwrap(),
    ]));
    assert!(spikes.lines().count() > 0);
    for line in spikes.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 3);
        cols[0].parse::<usize>().unwrap();
        cols[2].parse::<f64>().unwrap();
    }
    let graph_path = dir.path().join("graph.txt");
    run_ok(bin().args([
        "build-graph",
        "--list",
        dir.path().join("phrases.txt").to_str().unwrap(),
        "--vocab",
        dir.path().join("vocab.txt").to_str().unwrap(),
        "--out",
        graph_path.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(&graph_path).unwrap();
    assert!(text.starts_with("biasgraph states="));
    // The dump parses back into the same automaton.
    ctxspike_core::io::load_graph_dump(&graph_path).unwrap();
}

#[test]
fn filter_reports_kept_phrases_per_utterance() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path(), 29);
    let out = run_ok(bin().args([
        "filter",
        "--manifest",
        dir.path().join("manifest.json").to_str().unwrap(),
    ]));
    let mut kept = 0usize;
    let mut seen = 0usize;
    for line in out.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 5);
        seen += 1;
        if cols[4] == "1" {
            kept += 1;
        }
    }
    assert!(seen > 0);
    assert!(kept > 0, "every utterance contains a pool phrase; some must survive");
    assert!(kept < seen, "distractor phrases must be filtered out");
}
