use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::time::{Duration, Instant};

use ptt_core::eval::{
    density_report, format_report, format_report_kv, gen_corpus, mean_scores, read_corpus, write_corpus, Corpus,
    CorpusManifest, Split, Tracklet, TrackletScore,
};
use ptt_core::ptt::write_attention_dump;
use ptt_core::tracker::checkpoint::{check_compatible, load, save};
use ptt_core::tracker::{evaluate, track as track_one, train_with, Predictor, TrackOptions, TrackerConfig, TrackerModel, Wiring};

use crate::manifest::RunManifest;
use crate::{parse_categories, AblateArgs, BenchArgs, CliError, GenArgs, ModelFlags, ReplayArgs, TrackArgs, TrainArgs};

fn resolve_config(flags: &ModelFlags) -> Result<TrackerConfig, CliError> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            TrackerConfig::parse(&text)?
        }
        None => TrackerConfig::default(),
    };
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(v) = flags.ptt_vote {
        cfg.wiring.ptt_vote = v;
    }
    if let Some(p) = flags.ptt_prop {
        cfg.wiring.ptt_prop = p;
    }
    if let Some(s) = flags.sampler {
        cfg.sampler = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_corpus(data: &Path) -> Result<Corpus, CliError> {
    read_corpus(data).map_err(|e| CliError::Data(format!("{}: {e}", data.display())))
}

fn load_checkpoint(path: &Path) -> Result<TrackerModel, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(load(std::io::BufReader::new(f))?)
}

fn save_checkpoint(model: &TrackerModel, path: &Path) -> Result<(), CliError> {
    save(model, BufWriter::new(fs::File::create(path)?))?;
    Ok(())
}

pub fn gen(a: GenArgs, argv: Vec<String>) -> Result<(), CliError> {
    let categories = parse_categories(&a.categories)?;
    let mut run = RunManifest::new("gen", &argv, a.seed, None);
    run.write(&a.out)?;
    let tracklets = gen_corpus(a.count, a.frames, &categories, a.mix, a.seed)?;
    let names: Vec<String> = tracklets.iter().map(|t| t.meta().name.clone()).collect();
    let corpus = Corpus {
        manifest: CorpusManifest {
            seed: a.seed,
            count: a.count,
            frames: a.frames,
            mix: a.mix.as_str().to_string(),
            categories: a.categories.clone(),
        },
        split: Split::by_position(&names),
        tracklets,
    };
    write_corpus(&a.out, &corpus)?;
    let sparse = corpus.tracklets.iter().filter(|t| t.first_frame_in_box() < 50).count();
    eprintln!("wrote {} tracklets ({sparse} with fewer than 50 first-frame points)", corpus.tracklets.len());
    run.mark_finished(&a.out)
}

fn epoch_line(e: &ptt_core::tracker::EpochLog) -> String {
    let m = &e.mean;
    format!(
        "epoch={} lr={:e} samples={} l_cv={:.6} l_cb={:.6} l_rv={:.6} l_rb={:.6} l_all={:.6} no_foreground={} no_positive={}",
        e.epoch, e.lr, e.samples, m.l_cv, m.l_cb, m.l_rv, m.l_rb, m.l_all, e.no_foreground, e.no_positive
    )
}

fn train_model(cfg: &TrackerConfig, corpus: &Corpus, log: &mut String) -> Result<TrackerModel, CliError> {
    let train_set = corpus.part("train")?;
    let outcome = train_with(cfg, &train_set, |e| {
        let line = epoch_line(e);
        eprintln!("{line}");
        log.push_str(&line);
        log.push('\n');
    })?;
    Ok(outcome.model)
}

pub fn train(a: TrainArgs, argv: Vec<String>) -> Result<(), CliError> {
    let cfg = resolve_config(&a.model)?;
    let mut run = RunManifest::new("train", &argv, cfg.seed, Some(cfg.clone()));
    run.write(&a.out)?;
    let corpus = load_corpus(&a.data)?;
    let mut log = String::new();
    let model = train_model(&cfg, &corpus, &mut log)?;
    fs::write(a.out.join("epochs.log"), log)?;
    save_checkpoint(&model, &a.out.join("checkpoint.ptt"))?;
    run.mark_finished(&a.out)
}

fn score_split(
    tracklets: &[&Tracklet],
    predictor: Predictor<'_>,
    opts: &TrackOptions,
) -> Result<(Vec<TrackletScore>, Vec<ptt_core::tracker::TrackResult>), CliError> {
    let results = evaluate(tracklets, predictor, opts)?;
    Ok(results.into_iter().unzip())
}

pub fn track(a: TrackArgs, argv: Vec<String>) -> Result<(), CliError> {
    let model = match (&a.checkpoint, a.oracle) {
        (_, true) => None,
        (Some(p), false) => Some(load_checkpoint(p)?),
        (None, false) => return Err(CliError::Usage("--checkpoint or --oracle is required".into())),
    };
    if let (Some(m), Some(_)) = (&model, &a.model.config) {
        check_compatible(m, &resolve_config(&a.model)?)?;
    }
    let wiring = model.as_ref().map(|m| Wiring {
        ptt_vote: a.model.ptt_vote.unwrap_or(m.config.wiring.ptt_vote),
        ptt_prop: a.model.ptt_prop.unwrap_or(m.config.wiring.ptt_prop),
    });
    let seed = model.as_ref().map_or(0, |m| m.config.seed);
    let mut run = RunManifest::new("track", &argv, seed, model.as_ref().map(|m| m.config.clone()));
    run.write(&a.out)?;

    let corpus = load_corpus(&a.data)?;
    let tracklets = corpus.part(&a.split)?;
    if tracklets.is_empty() {
        eprintln!("warning: split {:?} is empty", a.split);
    }
    let predictor = model.as_ref().map_or(Predictor::Oracle, Predictor::Model);
    let opts = TrackOptions { template_mode: a.template_mode, wiring, dump_attention: a.dump_attention };
    let (scores, results) = score_split(&tracklets, predictor, &opts)?;
    let success: Vec<f64> = scores.iter().map(|s| s.success).collect();
    let density = density_report(&tracklets, &success)?;
    let mut header = format!("template_mode={}\n", a.template_mode);
    if let Some(w) = wiring {
        let _ = writeln!(header, "wiring={}", w.label());
    }
    fs::write(a.out.join("report.txt"), header.clone() + &format_report(&scores, &density))?;
    fs::write(a.out.join("report.kv"), header + &format_report_kv(&scores, &density))?;
    if a.dump_attention {
        let mut buf = Vec::new();
        for (t, r) in tracklets.iter().zip(&results) {
            for d in &r.attention {
                buf.extend_from_slice(format!("# {} frame={} stage={}\n", t.meta().name, d.frame, d.stage).as_bytes());
                write_attention_dump(&mut buf, &d.neighbors, &d.weights)?;
            }
        }
        fs::write(a.out.join("attention.txt"), buf)?;
    }
    if let Some((s, p)) = mean_scores(&scores) {
        eprintln!("mean success {s:.2} precision {p:.2} over {} tracklets", scores.len());
    }
    run.mark_finished(&a.out)
}

pub fn ablate(a: AblateArgs, argv: Vec<String>) -> Result<(), CliError> {
    let base = resolve_config(&a.model)?;
    let mut run = RunManifest::new("ablate", &argv, base.seed, Some(base.clone()));
    run.write(&a.out)?;
    let corpus = load_corpus(&a.data)?;
    let test = corpus.part("test")?;
    let mut table = format!("{:<10} {:>9} {:>9}\n", "wiring", "success", "precision");
    let mut kv = format!("seed={}\ntemplate_mode={}\n", base.seed, a.template_mode);
    for wiring in Wiring::ALL {
        let cfg = TrackerConfig { wiring, ..base.clone() };
        let mut log = String::new();
        let model = train_model(&cfg, &corpus, &mut log)?;
        fs::write(a.out.join(format!("{}.epochs.log", wiring.label())), log)?;
        save_checkpoint(&model, &a.out.join(format!("{}.ptt", wiring.label())))?;
        let opts = TrackOptions { template_mode: a.template_mode, wiring: None, dump_attention: false };
        let (scores, _) = score_split(&test, Predictor::Model(&model), &opts)?;
        let (s, p) = mean_scores(&scores).unwrap_or((0.0, 0.0));
        let _ = writeln!(table, "{:<10} {s:>9.2} {p:>9.2}", wiring.label());
        let _ = writeln!(kv, "{}.success={s:.6}\n{}.precision={p:.6}", wiring.label(), wiring.label());
    }
    eprint!("{table}");
    fs::write(a.out.join("ablation.txt"), table)?;
    fs::write(a.out.join("ablation.kv"), kv)?;
    run.mark_finished(&a.out)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn bench(a: BenchArgs, argv: Vec<String>) -> Result<(), CliError> {
    let model = load_checkpoint(&a.checkpoint)?;
    let mut run = RunManifest::new("bench", &argv, model.config.seed, Some(model.config.clone()));
    run.write(&a.out)?;
    let corpus = load_corpus(&a.data)?;
    let tracklets = corpus.part(&a.split)?;
    let opts = TrackOptions { template_mode: a.template_mode, ..Default::default() };
    let (mut prepare, mut forward, mut post, mut wall) = (Duration::ZERO, Duration::ZERO, Duration::ZERO, Duration::ZERO);
    let mut frames = 0usize;
    for t in &tracklets {
        let start = Instant::now();
        let r = track_one(t, Predictor::Model(&model), &opts)?;
        wall += start.elapsed();
        // frame 0 is the given initialisation
        for ft in &r.timings[1..] {
            prepare += ft.prepare;
            forward += ft.forward;
            post += ft.post;
        }
        frames += t.len() - 1;
    }
    let mut out = String::new();
    if frames == 0 {
        out.push_str("frames=0\n");
    } else {
        let n = frames as f64;
        let total = ms(prepare + forward + post) / n;
        let _ = writeln!(out, "frames={frames}");
        let _ = writeln!(out, "prepare_ms={:.4}", ms(prepare) / n);
        let _ = writeln!(out, "forward_ms={:.4}", ms(forward) / n);
        let _ = writeln!(out, "post_ms={:.4}", ms(post) / n);
        let _ = writeln!(out, "total_ms={total:.4}");
        let _ = writeln!(out, "wall_ms={:.4}", ms(wall) / n);
        let _ = writeln!(out, "fps={:.2}", 1e3 / (ms(wall) / n));
    }
    eprint!("{out}");
    fs::write(a.out.join("bench.txt"), out)?;
    run.mark_finished(&a.out)
}

/// Re-executes the recorded command in a child process pinned to one thread.
pub fn replay(a: ReplayArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.manifest).map_err(|e| CliError::Data(format!("{}: {e}", a.manifest.display())))?;
    let recorded = RunManifest::parse(&text)?;
    fs::create_dir_all(&a.out)?;
    // only these commands take --config; bench records its checkpoint's config for reference
    let takes_config = matches!(recorded.command.as_str(), "train" | "track" | "ablate");
    let snapshot = match &recorded.config {
        Some(cfg) if takes_config => {
            let p = a.out.join("replay_config.txt");
            fs::write(&p, cfg.to_text())?;
            Some(p)
        }
        _ => None,
    };
    let args = recorded.replay_args(&a.out, snapshot.as_deref());
    let exe = std::env::current_exe()?;
    let status = std::process::Command::new(exe).args(&args).env("PTT_THREADS", "1").status()?;
    match status.code() {
        Some(0) => Ok(()),
        Some(1) => Err(CliError::Usage("replayed command failed".into())),
        Some(3) => Err(CliError::Numerical("replayed command failed".into())),
        _ => Err(CliError::Data("replayed command failed".into())),
    }
}
