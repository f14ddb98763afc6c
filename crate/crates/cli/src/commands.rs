use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use motinv_core::codec::{read_file, write_atomic};
use motinv_core::denoiser::MDEN_MAGIC;
use motinv_core::embeddings::MEMB_MAGIC;
use motinv_core::inversion::{self, Example};
use motinv_core::synth::{self, MVID_MAGIC};
use motinv_core::{diffusion, metrics, DenoiserParams, FormatError, MotionEmbeddingSet, Tensor};

use crate::config::RunConfig;
use crate::error::CliError;

const INDEX_FILE: &str = "index.txt";

fn log(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}

fn maybe_ppm(cfg: &RunConfig, path: &Path, video: &Tensor) -> Result<(), CliError> {
    if cfg.flag("ppm")? {
        let dir = path.parent().unwrap_or(Path::new("."));
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        synth::export_ppm_frames(dir, &stem, video)?;
    }
    Ok(())
}

/// `<artifact>.loss.txt`
pub fn loss_log_path(artifact: &Path) -> PathBuf {
    artifact.with_extension("loss.txt")
}

/// Renders the corpus (every script under every appearance seed) and the
/// held-out reference pan.
pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = cfg.spec()?;
    let appearances: usize = cfg.parse_value("appearances")?;
    if appearances == 0 || appearances > spec.vocab {
        return Err(CliError::Config(format!(
            "appearances = {appearances} must be in 1..={} (one prompt id each)",
            spec.vocab
        )));
    }
    let dir = cfg.corpus_dir();
    let scripts = synth::default_corpus(spec.frames, spec.height, spec.width);
    let mut index = String::from("# video prompt_id\n");
    for script in &scripts {
        script
            .validate()
            .map_err(|e| CliError::Config(format!("canvas too small for the corpus: {e}")))?;
        for k in 0..appearances {
            let stem = format!("{}_a{k}", script.name);
            let (video, gt) = synth::render(script, k as u64)?;
            let path = dir.join(format!("{stem}.mvid"));
            synth::save_video(&path, &video)?;
            write_atomic(&dir.join(format!("{stem}.gt.txt")), gt.to_text().as_bytes())?;
            maybe_ppm(cfg, &path, &video)?;
            let _ = writeln!(index, "{stem}.mvid {k}");
        }
    }
    write_atomic(&dir.join(INDEX_FILE), index.as_bytes())?;
    log(format!(
        "wrote {} videos to {}",
        scripts.len() * appearances,
        dir.display()
    ));

    let velocity = (
        cfg.parse_value("source_pan_x")?,
        cfg.parse_value("source_pan_y")?,
    );
    let source = synth::pan_script("source", spec.frames, spec.height, spec.width, velocity);
    source
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let (video, gt) = synth::render(&source, cfg.parse_value("source_appearance")?)?;
    let path = cfg.reference_path();
    synth::save_video(&path, &video)?;
    write_atomic(&path.with_extension("gt.txt"), gt.to_text().as_bytes())?;
    maybe_ppm(cfg, &path, &video)?;
    log(format!("wrote reference {}", path.display()));
    Ok(())
}

/// Reads `index.txt` of a corpus directory.
pub fn load_corpus(dir: &Path) -> Result<Vec<Example>, CliError> {
    let index_path = dir.join(INDEX_FILE);
    let text = String::from_utf8(read_file(&index_path)?).map_err(|_| {
        CliError::Core(
            FormatError::InvalidField {
                field: "index",
                detail: "not UTF-8".into(),
            }
            .into(),
        )
    })?;
    let mut out = Vec::new();
    for line in text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
    {
        let bad = || {
            CliError::Core(
                FormatError::InvalidField {
                    field: "index",
                    detail: format!("bad line {line:?}"),
                }
                .into(),
            )
        };
        let (file, cond) = line.split_once(' ').ok_or_else(bad)?;
        let cond = cond.trim().parse().map_err(|_| bad())?;
        out.push(Example {
            video: synth::load_video(&dir.join(file))?,
            cond,
        });
    }
    Ok(out)
}

pub fn pretrain(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = cfg.spec()?;
    let schedule = cfg.schedule()?;
    let pcfg = cfg.pretraining()?;
    let data = load_corpus(&cfg.corpus_dir())?;
    log(format!(
        "pretraining on {} videos for {} steps",
        data.len(),
        pcfg.steps
    ));
    let out = inversion::pretrain_with_progress(&schedule, &data, &spec, &pcfg, |step, loss| {
        log(format!("pretrain step {step} loss {loss:.6}"));
    })?;
    let path = cfg.params_path();
    out.params.save(&path)?;
    write_atomic(
        &loss_log_path(&path),
        inversion::loss_log(&out.losses).as_bytes(),
    )?;
    log(format!(
        "wrote {} (sha256 {})",
        path.display(),
        out.params.checksum()
    ));
    Ok(())
}

/// Loads the checkpoint and checks it against the configured spec.
fn load_params(cfg: &RunConfig) -> Result<DenoiserParams, CliError> {
    let path = cfg.params_path();
    let params = DenoiserParams::load(&path)?;
    let want = cfg.spec()?;
    if *params.spec() != want {
        return Err(CliError::Config(format!(
            "{} holds spec {:?}, config asks for {want:?}",
            path.display(),
            params.spec()
        )));
    }
    Ok(params)
}

pub fn invert(cfg: &RunConfig) -> Result<(), CliError> {
    let schedule = cfg.schedule()?;
    let icfg = cfg.inversion()?;
    let params = load_params(cfg)?;
    let video = synth::load_video(&cfg.reference_path())?;
    let cond: usize = cfg.parse_value("source_prompt")?;
    let out =
        inversion::invert_with_progress(&schedule, &video, &params, cond, &icfg, |step, loss| {
            log(format!("invert step {step} loss {loss:.6}"));
        })?;
    let path = cfg
        .embeddings_path()
        .ok_or_else(|| CliError::Config("invert needs an embeddings path, not none".into()))?;
    out.embeddings.save(&path)?;
    write_atomic(
        &loss_log_path(&path),
        inversion::loss_log(&out.losses).as_bytes(),
    )?;
    log(format!("wrote {}", path.display()));
    Ok(())
}

pub fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    let schedule = cfg.schedule()?;
    let params = load_params(cfg)?;
    let m = match cfg.embeddings_path() {
        Some(p) => {
            let mut m = MotionEmbeddingSet::load(&p)?;
            m.set_inference_strategy(cfg.parse_value("inference_strategy")?);
            Some(m)
        }
        None => None,
    };
    let video = diffusion::sample(
        &schedule,
        &params,
        m.as_ref(),
        cfg.parse_value("prompt")?,
        cfg.parse_value("sample_seed")?,
        cfg.parse_value("sample_steps")?,
    )?;
    let path = cfg.output_path();
    synth::save_video(&path, &video)?;
    maybe_ppm(cfg, &path, &video)?;
    log(format!("wrote {}", path.display()));
    Ok(())
}

/// Metric lines `name<TAB>value<TAB>reference<TAB>output`.
pub fn evaluate_report(reference: &Path, output: &Path) -> Result<String, CliError> {
    let ref_video = synth::load_video(reference)?;
    let out_video = synth::load_video(output)?;
    let ref_tracks = metrics::track(&ref_video)?;
    let out_tracks = metrics::track(&out_video)?;
    let fidelity = metrics::motion_fidelity(&ref_tracks, &out_tracks)?;
    let consistency = metrics::temporal_consistency(&out_video)?;
    let fa = metrics::frame_features(&ref_video, &metrics::pooled_pixels)?;
    let fb = metrics::frame_features(&out_video, &metrics::pooled_pixels)?;
    let frechet = metrics::frechet_distance(&fa, &fb)?;
    let (dx, dy) = metrics::mean_displacement(&out_tracks);
    let (r, o) = (reference.display(), output.display());
    let mut s = String::new();
    let _ = writeln!(s, "motion_fidelity\t{fidelity}\t{r}\t{o}");
    let _ = writeln!(s, "temporal_consistency\t{consistency}\t{o}");
    let _ = writeln!(s, "frechet_distance\t{frechet}\t{r}\t{o}");
    let _ = writeln!(s, "mean_displacement\t{dx},{dy}\t{o}");
    Ok(s)
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let report = evaluate_report(&cfg.reference_path(), &cfg.output_path())?;
    print!("{report}");
    write_atomic(&cfg.report_path(), report.as_bytes())?;
    Ok(())
}

/// Human-readable summary of an MDEN, MEMB or MVID file.
pub fn inspect(path: &Path) -> Result<String, CliError> {
    let bytes = read_file(path)?;
    let magic = bytes.get(..8).unwrap_or(&bytes);
    let mut s = String::new();
    if magic == MDEN_MAGIC {
        let p = DenoiserParams::from_bytes(&bytes)?;
        let spec = p.spec();
        let _ = writeln!(s, "denoiser checkpoint {}", path.display());
        let _ = writeln!(s, "  spec {spec:?}");
        let _ = writeln!(
            s,
            "  parameters {} in {} tensors",
            p.param_count(),
            p.tensors().len()
        );
        let _ = writeln!(s, "  frozen {}", p.is_frozen());
        let _ = writeln!(s, "  sha256 {}", p.checksum());
    } else if magic == MEMB_MAGIC {
        let m = MotionEmbeddingSet::from_bytes(&bytes)?;
        let c = m.config();
        let _ = writeln!(s, "motion embeddings {}", path.display());
        let _ = writeln!(
            s,
            "  qk {} v {} strategy {} frames {}",
            c.qk_spatial,
            c.v_spatial,
            c.inference_strategy,
            m.frames()
        );
        for (i, d) in m.modules().iter().enumerate() {
            let _ = writeln!(
                s,
                "  module {i}: channels {} size {}x{} qk {:?} v {:?}",
                d.channels,
                d.height,
                d.width,
                m.qk(i).shape(),
                m.v(i).shape()
            );
        }
        let _ = writeln!(s, "  parameters {}", m.param_count());
    } else if magic == MVID_MAGIC {
        let v = synth::video_from_bytes(&bytes)?;
        let (lo, hi) = v
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x as f64), hi.max(x as f64))
            });
        let _ = writeln!(s, "video {}", path.display());
        let _ = writeln!(s, "  shape {:?}", v.shape());
        let _ = writeln!(s, "  range [{lo}, {hi}]");
    } else {
        return Err(CliError::Core(
            FormatError::BadMagic {
                expected: "MDEN0001, MEMB0001 or MVID0001".into(),
                found: magic.to_vec(),
            }
            .into(),
        ));
    }
    Ok(s)
}
