//! Subcommand implementations. Every command computes all of its outputs in
//! memory first and only then touches the output directory, so a failure
//! leaves nothing behind.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fca_core::audio::{read_wav, write_wav};
use fca_core::evalkit::{expected_counts, mean};
use fca_core::pipeline::{bench, counter_ratio, evaluate, rtf_ratio, separate, Separation};
use fca_core::scene::{generate_scene, synth_mixture};
use fca_core::wiener::peak_normalize;
use fca_core::{Algorithm, Audio, EvalReport};

use crate::config::RunConfig;
use crate::manifest::{Manifest, ReportEntry};

const NORMALIZED_PEAK: f64 = 0.99;

enum Payload {
    Wav(Audio),
    Text(String),
}

struct Outputs(Vec<(String, Payload)>);

impl Outputs {
    fn new() -> Self {
        Self(Vec::new())
    }

    fn wav(&mut self, name: String, audio: Audio) {
        self.0.push((name, Payload::Wav(audio)));
    }

    fn text(&mut self, name: &str, text: String) {
        self.0.push((name.to_string(), Payload::Text(text)));
    }

    fn names(&self) -> Vec<String> {
        self.0.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Adds the resolved config and the manifest, then writes everything.
    fn commit(mut self, cfg: &RunConfig, mut manifest: Manifest) -> Result<()> {
        self.text("config.toml", cfg.to_toml()?);
        manifest.outputs = self.names();
        manifest.outputs.push("manifest.json".into());
        self.text(
            "manifest.json",
            serde_json::to_string_pretty(&manifest)? + "\n",
        );
        let dir = &cfg.out;
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, payload) in self.0 {
            let path = dir.join(&name);
            let written: Result<()> = match payload {
                Payload::Wav(a) => write_wav(&path, &a).map_err(Into::into),
                Payload::Text(t) => fs::write(&path, t).map_err(Into::into),
            };
            written.with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Audio> {
    read_wav(path).with_context(|| format!("reading {}", path.display()))
}

fn require_rate(audio: &Audio, rate: u32, path: &Path) -> Result<()> {
    if audio.sample_rate != rate {
        bail!(
            "{} is sampled at {} Hz, expected {} Hz",
            path.display(),
            audio.sample_rate,
            rate
        );
    }
    Ok(())
}

fn csv(reports: &[EvalReport]) -> String {
    let sources = reports.first().map_or(0, |r| r.sources);
    let mut out = EvalReport::csv_header(sources) + "\n";
    for r in reports {
        out += &r.csv_row();
        out.push('\n');
    }
    out
}

pub fn synth(cfg: &mut RunConfig) -> Result<()> {
    let (mixture, images) = if cfg.dry.is_empty() && cfg.rirs.is_empty() {
        let scene = generate_scene(&cfg.scene())?;
        (scene.mixture, scene.images)
    } else {
        if cfg.dry.len() != cfg.rirs.len() {
            bail!(
                "{} dry sources but {} impulse-response files",
                cfg.dry.len(),
                cfg.rirs.len()
            );
        }
        let dry = cfg
            .dry
            .iter()
            .map(|p| read(p))
            .collect::<Result<Vec<_>>>()?;
        let rirs = cfg
            .rirs
            .iter()
            .map(|p| read(p))
            .collect::<Result<Vec<_>>>()?;
        let rate = dry[0].sample_rate;
        for (a, p) in dry.iter().zip(&cfg.dry) {
            require_rate(a, rate, p)?;
            if a.num_channels() != 1 {
                bail!(
                    "{} has {} channels; dry sources must be mono",
                    p.display(),
                    a.num_channels()
                );
            }
        }
        for (a, p) in rirs.iter().zip(&cfg.rirs) {
            require_rate(a, rate, p)?;
        }
        let dry: Vec<Vec<f64>> = dry.into_iter().map(|mut a| a.channels.remove(0)).collect();
        let rirs: Vec<Vec<Vec<f64>>> = rirs.into_iter().map(|a| a.channels).collect();
        cfg.sample_rate = rate;
        cfg.sources = dry.len();
        cfg.mics = rirs[0].len();
        synth_mixture(&dry, &rirs, rate)?
    };
    let mut out = Outputs::new();
    out.wav("mixture.wav".into(), mixture);
    for (j, img) in images.into_iter().enumerate() {
        out.wav(format!("image_{}.wav", j + 1), img);
    }
    let manifest = Manifest::new("synth", cfg);
    out.commit(cfg, manifest)?;
    println!(
        "wrote mixture and {} reference images to {}",
        cfg.sources,
        cfg.out.display()
    );
    Ok(())
}

/// Report for a mixture without references: timing and counters only.
fn unevaluated(sep: &Separation) -> EvalReport {
    let nan = vec![f64::NAN; sep.sources()];
    EvalReport {
        algorithm: sep.algorithm,
        order: sep.order(),
        sources: sep.sources(),
        frames: sep.frames(),
        bins: sep.bins(),
        iterations: sep.iterations,
        inner_k: sep.inner_k,
        rtf: sep.rtf,
        sdr_per_source: nan.clone(),
        sdr_input: nan,
        counters: sep.counters_per_iteration(),
        trial: 0,
    }
}

pub fn separate_cmd(cfg: &mut RunConfig) -> Result<()> {
    let (mixture, references) = match cfg.mixture.clone() {
        Some(path) => {
            let mixture = read(&path)?;
            cfg.sample_rate = mixture.sample_rate;
            let refs = cfg
                .references
                .iter()
                .map(|p| read(p))
                .collect::<Result<Vec<_>>>()?;
            for (r, p) in refs.iter().zip(&cfg.references) {
                require_rate(r, mixture.sample_rate, p)?;
            }
            if !refs.is_empty() {
                cfg.sources = refs.len();
            }
            (mixture, refs)
        }
        None => {
            let scene = generate_scene(&cfg.scene())?;
            (scene.mixture, scene.images)
        }
    };
    let sep_cfg = cfg.separation()?;
    let refs = (!references.is_empty()).then_some(references.as_slice());
    let mut sep = separate(&mixture, refs, &sep_cfg)?;
    let report = match refs {
        Some(r) => evaluate(&sep, r, &mixture, 0)?,
        None => unevaluated(&sep),
    };
    println!("{report}");
    if cfg.peak_normalize {
        peak_normalize(&mut sep.images, NORMALIZED_PEAK);
    }
    let mut out = Outputs::new();
    for (j, img) in sep.images.into_iter().enumerate() {
        out.wav(format!("source_{}.wav", j + 1), img);
    }
    out.text("report.csv", csv(std::slice::from_ref(&report)));
    let mut manifest = Manifest::new("separate", cfg);
    manifest.reports.push(ReportEntry::from(&report));
    out.commit(cfg, manifest)
}

pub fn bench_cmd(cfg: &RunConfig) -> Result<()> {
    let bench_cfg = cfg.bench()?;
    let reports = bench(&bench_cfg, |r| println!("trial {}: {r}", r.trial))?;
    let s = &bench_cfg.scene;
    let frames = reports.first().map_or(0, |r| r.frames);
    let bins = reports.first().map_or(0, |r| r.bins);
    let ratio = rtf_ratio(&reports, Algorithm::Fca, Algorithm::FastFca);
    let counters = counter_ratio(s.mics, s.sources, frames, bins, cfg.inner_k);

    let mut summary =
        String::from("algorithm,trials,rtf_mean,sdr_mean,sdr_input_mean,inversions,matmuls\n");
    for &a in &bench_cfg.algorithms {
        let rs: Vec<&EvalReport> = reports.iter().filter(|r| r.algorithm == a).collect();
        let avg =
            |f: &dyn Fn(&EvalReport) -> f64| mean(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
        summary += &format!(
            "{a},{},{:.6},{:.4},{:.4},{},{}\n",
            rs.len(),
            avg(&|r| r.rtf),
            avg(&|r| r.sdr_mean()),
            avg(&|r| r.sdr_input_mean()),
            rs[0].counters.inversions,
            rs[0].counters.matmuls
        );
    }
    summary += &format!(
        "\nrtf_ratio,counter_ratio\n{},{counters:.4}\n",
        ratio.map_or("nan".to_string(), |r| format!("{r:.4}"))
    );
    if let Some(r) = ratio {
        println!("RTF ratio fca/fastfca {r:.2}, heavy-operation count ratio {counters:.1}");
    }

    let mut out = Outputs::new();
    out.text("bench.csv", csv(&reports));
    out.text("bench_summary.csv", summary);
    let mut manifest = Manifest::new("bench", cfg);
    manifest.reports = reports.iter().map(ReportEntry::from).collect();
    manifest.rtf_ratio = ratio;
    manifest.counter_ratio = Some(counters);
    out.commit(cfg, manifest)
}

pub fn expected_counts_cmd(
    order: usize,
    sources: usize,
    frames: usize,
    bins: usize,
    inner_k: usize,
) {
    println!("algorithm,I,J,N,F,K,inversions,matmuls");
    for a in [Algorithm::Fca, Algorithm::FastFca] {
        let c = expected_counts(a, order, sources, frames, bins, inner_k);
        println!(
            "{a},{order},{sources},{frames},{bins},{inner_k},{},{}",
            c.inversions, c.matmuls
        );
    }
    println!(
        "heavy-operation ratio {:.1}",
        counter_ratio(order, sources, frames, bins, inner_k)
    );
}
