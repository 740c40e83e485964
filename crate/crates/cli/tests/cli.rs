use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fca_core::audio::{read_wav, write_wav};
use fca_core::evalkit::expected_counts;
use fca_core::pipeline::{initial_params, SeparationConfig};
use fca_core::scene::{generate_scene, SceneConfig};
use fca_core::stft::analyze;
use fca_core::wiener::{mmse_images_fca, resynthesize_images};
use fca_core::{Algorithm, Audio};
use tempfile::TempDir;

/// Short scenes keep these tests fast.
const QUICK: [&str; 4] = ["--duration", "1", "--iterations", "3"];

fn fca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fca"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = fca(args);
    assert!(
        out.status.success(),
        "fca {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn max_abs_diff(a: &Audio, b: &Audio) -> f64 {
    assert_eq!(a.num_channels(), b.num_channels());
    assert_eq!(a.len(), b.len());
    a.channels
        .iter()
        .flatten()
        .zip(b.channels.iter().flatten())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// CSV rows with the wall-clock column removed.
fn csv_without_rtf(text: &str) -> Vec<Vec<String>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rtf = header.iter().position(|c| *c == "rtf").unwrap();
    lines
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| *i != rtf)
                .map(|(_, c)| c.to_string())
                .collect()
        })
        .collect()
}

fn column(text: &str, name: &str) -> Vec<String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|c| *c == name).unwrap();
    lines
        .map(|l| l.split(',').nth(idx).unwrap().to_string())
        .collect()
}

#[test]
fn expected_counts_prints_reference_figures() {
    let out = ok(&["expected-counts"]);
    assert!(out.contains("fca,3,3,249,512,1,129024,764928"), "{out}");
    assert!(out.contains("fastfca,3,3,249,512,1,2048,0"), "{out}");
}

#[test]
fn expected_counts_rejects_zero_dimensions() {
    assert!(!fca(&["expected-counts", "--frames", "0"]).status.success());
}

#[test]
fn synth_writes_mixture_equal_to_sum_of_images() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("scene");
    ok(&[
        "synth",
        "--duration",
        "0.5",
        "--sources",
        "2",
        "--out",
        path(&out),
    ]);
    let mix = read_wav(out.join("mixture.wav")).unwrap();
    let a = read_wav(out.join("image_1.wav")).unwrap();
    let b = read_wav(out.join("image_2.wav")).unwrap();
    assert_eq!(mix.num_channels(), 3);
    assert_eq!(mix.len(), 8000);
    let sum = Audio::new(
        16000,
        a.channels
            .iter()
            .zip(&b.channels)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
            .collect(),
    )
    .unwrap();
    // float32 storage
    assert!(max_abs_diff(&mix, &sum) < 1e-5);
    assert!(out.join("manifest.json").exists() && out.join("config.toml").exists());
}

#[test]
fn synth_from_files_with_unit_impulses_replicates_dry_sources() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let s1: Vec<f64> = (0..400).map(|t| (t as f64 * 0.05).sin() * 0.5).collect();
    let s2: Vec<f64> = (0..400)
        .map(|t| ((t * 7919) % 101) as f64 / 200.0 - 0.25)
        .collect();
    write_wav(
        d.join("s1.wav"),
        &Audio::new(8000, vec![s1.clone()]).unwrap(),
    )
    .unwrap();
    write_wav(
        d.join("s2.wav"),
        &Audio::new(8000, vec![s2.clone()]).unwrap(),
    )
    .unwrap();
    let impulse = Audio::new(8000, vec![vec![1.0], vec![1.0]]).unwrap();
    write_wav(d.join("h1.wav"), &impulse).unwrap();
    write_wav(d.join("h2.wav"), &impulse).unwrap();
    let out = d.join("mix");
    let dry = format!("{},{}", path(&d.join("s1.wav")), path(&d.join("s2.wav")));
    let rirs = format!("{},{}", path(&d.join("h1.wav")), path(&d.join("h2.wav")));
    ok(&["synth", "--dry", &dry, "--rirs", &rirs, "--out", path(&out)]);
    let mix = read_wav(out.join("mixture.wav")).unwrap();
    assert_eq!(mix.sample_rate, 8000);
    let expected: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| a + b).collect();
    let want = Audio::new(8000, vec![expected.clone(), expected]).unwrap();
    assert!(max_abs_diff(&mix, &want) < 1e-6);
}

#[test]
fn synth_rejects_mismatched_sample_rates() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write_wav(
        d.join("s1.wav"),
        &Audio::new(8000, vec![vec![0.1; 100]]).unwrap(),
    )
    .unwrap();
    write_wav(
        d.join("h1.wav"),
        &Audio::new(16000, vec![vec![1.0]]).unwrap(),
    )
    .unwrap();
    let out = d.join("mix");
    let res = fca(&[
        "synth",
        "--dry",
        path(&d.join("s1.wav")),
        "--rirs",
        path(&d.join("h1.wav")),
        "--out",
        path(&out),
    ]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("Hz"));
    assert!(!out.exists());
}

#[test]
fn separate_writes_sources_report_and_manifest() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sep");
    let mut args = vec!["separate", "--out", path(&out)];
    args.extend(QUICK);
    ok(&args);
    for j in 1..=3 {
        let s = read_wav(out.join(format!("source_{j}.wav"))).unwrap();
        assert_eq!((s.num_channels(), s.len()), (3, 16000));
    }
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
    assert!(report.starts_with(
        "algorithm,I,J,N,F,iterations,K,rtf,sdr_mean,sdr_1,sdr_2,sdr_3,inversions,matmuls"
    ));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["version"].as_str().unwrap().starts_with('v'));
    assert_eq!(manifest["command"], "separate");
    assert_eq!(manifest["config"]["iterations"], 3);
    assert_eq!(manifest["reports"][0]["inversions_per_iteration"], 2048);
}

#[test]
fn separated_images_sum_to_the_mixture() {
    let dir = TempDir::new().unwrap();
    let scene = dir.path().join("scene");
    ok(&["synth", "--duration", "1", "--out", path(&scene)]);
    let refs: Vec<String> = (1..=3)
        .map(|j| path(&scene.join(format!("image_{j}.wav"))).to_string())
        .collect();
    for algorithm in ["fca", "fastfca"] {
        let out = dir.path().join(algorithm);
        ok(&[
            "separate",
            "--mixture",
            path(&scene.join("mixture.wav")),
            "--references",
            &refs.join(","),
            "--algorithm",
            algorithm,
            "--iterations",
            "3",
            "--out",
            path(&out),
        ]);
        let mix = read_wav(scene.join("mixture.wav")).unwrap();
        let images: Vec<Audio> = (1..=3)
            .map(|j| read_wav(out.join(format!("source_{j}.wav"))).unwrap())
            .collect();
        let (mut err, mut total) = (0.0, 0.0);
        for c in 0..mix.num_channels() {
            for t in 1024..mix.len() - 1024 {
                let sum: f64 = images.iter().map(|a| a.channels[c][t]).sum();
                err += (sum - mix.channels[c][t]).powi(2);
                total += mix.channels[c][t].powi(2);
            }
        }
        let rel = (err / total).sqrt();
        assert!(rel < 1e-6, "{algorithm}: relative RMS {rel:e}");
    }
}

#[test]
fn zero_iterations_give_wiener_filtering_with_initial_parameters() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sep");
    ok(&[
        "separate",
        "--algorithm",
        "fca",
        "--iterations",
        "0",
        "--duration",
        "1",
        "--seed",
        "4",
        "--out",
        path(&out),
    ]);
    let scene = generate_scene(&SceneConfig {
        duration_secs: 1.0,
        seed: 4,
        ..SceneConfig::default()
    })
    .unwrap();
    let cfg = SeparationConfig::default();
    let obs = analyze(&scene.mixture.channels, &cfg.stft).unwrap();
    let init = initial_params(&obs, Some(&scene.images), &cfg).unwrap();
    let expected = resynthesize_images(
        &mmse_images_fca(&init, &obs).unwrap(),
        &cfg.stft,
        scene.mixture.len(),
    )
    .unwrap();
    for (j, want) in expected.iter().enumerate() {
        let got = read_wav(out.join(format!("source_{}.wav", j + 1))).unwrap();
        let scale = want.peak().max(1.0);
        assert!(max_abs_diff(&got, want) < 1e-6 * scale);
    }
}

#[test]
fn malformed_wav_leaves_no_outputs() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.wav");
    fs::write(&bad, b"RIFF\x10\x00\x00\x00WAVEnot really a wav").unwrap();
    let out = dir.path().join("sep");
    let res = fca(&[
        "separate",
        "--mixture",
        path(&bad),
        "--init",
        "diffuse",
        "--out",
        path(&out),
    ]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("error") && err.contains("bad.wav"), "{err}");
    assert!(!out.exists());
}

#[test]
fn oracle_init_without_references_is_a_clean_error() {
    let dir = TempDir::new().unwrap();
    let scene = dir.path().join("scene");
    ok(&["synth", "--duration", "0.5", "--out", path(&scene)]);
    let out = dir.path().join("sep");
    let res = fca(&[
        "separate",
        "--mixture",
        path(&scene.join("mixture.wav")),
        "--out",
        path(&out),
    ]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("reference"));
    assert!(!out.exists());
}

#[test]
fn blind_separation_of_a_file_reports_counts_without_sdr() {
    let dir = TempDir::new().unwrap();
    let scene = dir.path().join("scene");
    ok(&["synth", "--duration", "0.5", "--out", path(&scene)]);
    let out = dir.path().join("sep");
    ok(&[
        "separate",
        "--mixture",
        path(&scene.join("mixture.wav")),
        "--init",
        "diffuse",
        "--iterations",
        "2",
        "--out",
        path(&out),
    ]);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(column(&report, "sdr_mean"), ["NaN"]);
    assert_eq!(column(&report, "inversions"), ["2048"]);
}

#[test]
fn config_file_is_overridden_by_flags_and_written_back() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "iterations = 2\nalgorithm = \"fca\"\nduration_secs = 0.5\n",
    )
    .unwrap();
    let out = dir.path().join("sep");
    ok(&[
        "separate",
        "--config",
        path(&cfg),
        "--iterations",
        "1",
        "--out",
        path(&out),
    ]);
    let resolved = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(resolved.contains("iterations = 1"));
    assert!(resolved.contains("algorithm = \"fca\""));
    assert!(resolved.contains("duration_secs = 0.5"));

    // the written config reproduces the run
    let again = dir.path().join("again");
    ok(&[
        "separate",
        "--config",
        path(&out.join("config.toml")),
        "--out",
        path(&again),
    ]);
    let a = fs::read_to_string(out.join("report.csv")).unwrap();
    let b = fs::read_to_string(again.join("report.csv")).unwrap();
    assert_eq!(csv_without_rtf(&a), csv_without_rtf(&b));
}

#[test]
fn config_with_unknown_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "iteratons = 2\n").unwrap();
    let res = fca(&[
        "separate",
        "--config",
        path(&cfg),
        "--out",
        path(&dir.path().join("o")),
    ]);
    assert!(!res.status.success());
}

#[test]
fn bench_rows_counts_and_reproducibility() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["bench", "--trials", "2", "--out", path(&out)];
        args.extend(QUICK);
        ok(&args);
        fs::read_to_string(out.join("bench.csv")).unwrap()
    };
    let first = run("a");
    assert_eq!(first.lines().count(), 1 + 2 * 2);
    let frames: usize = column(&first, "N")[0].parse().unwrap();
    let inv = column(&first, "inversions");
    let mul = column(&first, "matmuls");
    for (row, alg) in column(&first, "algorithm").iter().enumerate() {
        let a: Algorithm = alg.parse().unwrap();
        let c = expected_counts(a, 3, 3, frames, 512, 1);
        assert_eq!(inv[row], c.inversions.to_string());
        assert_eq!(mul[row], c.matmuls.to_string());
    }
    assert_eq!(csv_without_rtf(&first), csv_without_rtf(&run("b")));
    let summary = fs::read_to_string(dir.path().join("a").join("bench_summary.csv")).unwrap();
    assert!(summary.contains("rtf_ratio,counter_ratio"));
}

#[test]
fn diffuse_bench_depends_only_on_the_seed() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&[
            "bench",
            "--init",
            "diffuse",
            "--seed",
            seed,
            "--duration",
            "0.5",
            "--iterations",
            "2",
            "--out",
            path(&out),
        ]);
        csv_without_rtf(&fs::read_to_string(out.join("bench.csv")).unwrap())
    };
    assert_eq!(run("a", "3"), run("b", "3"));
    assert_ne!(run("a", "3"), run("c", "5"));
}
