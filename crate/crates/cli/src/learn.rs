use std::path::{Path, PathBuf};

use dsglight::fitter::{FitBasis, Weighting, DEFAULT_FIT_DIMS};
use dsglight::graphnet::{
    build_sample, image_tensor, light_to_tensor, reconstruction_psnr, synthetic_dataset, tensor_to_light, train_with,
    Checkpoint, ModelConfig, TrainSample, DEFAULT_RECON_RES,
};
use dsglight::panorama::{pfm, tonemap_ldr, CropSpec};
use dsglight::sg_model::{reconstruct_panorama, ChannelSet};
use dsglight::sphere_layout::knn_adjacency;
use dsglight::{NodeLayout, Panorama, DEFAULT_K, DEFAULT_NODES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{pick, FileConfig};
use crate::io::{encode_panorama, read_json, read_light, read_panorama, sibling, write_json, Outputs};
use crate::{failed, input_err, CliError, CliResult, DatasetArgs, InferArgs, TrainArgs};

pub const MANIFEST_FORMAT: &str = "dsglight-dataset";
const DEFAULT_CROPS: usize = 4;
const SMOKE_SAMPLES: usize = 8;
const SMOKE_EPOCHS: usize = 2000;
const SMOKE_TARGET_DB: f64 = 30.0;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub n: usize,
    pub weighting: Weighting,
    pub fit_width: usize,
    pub fit_height: usize,
    pub crops_per_panorama: usize,
    pub samples: Vec<ManifestSample>,
    pub skipped: Vec<SkippedInput>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSample {
    pub source: String,
    /// Paths relative to the manifest.
    pub image: String,
    pub light: String,
    pub spec: String,
    pub crop: CropSpec,
    pub has_depth: bool,
    pub fit_psnr: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkippedInput {
    pub source: String,
    pub reason: String,
}

fn is_depth_map(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.to_ascii_lowercase().ends_with(".depth.pfm"))
}

fn panorama_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let ext = p
                .extension()
                .and_then(|e| e.to_str())
                .unwrap_or("")
                .to_ascii_lowercase();
            p.is_file() && (ext == "hdr" || ext == "pfm") && !is_depth_map(p)
        })
        .collect();
    files.sort();
    Ok(files)
}

fn load_source(path: &Path) -> CliResult<(Panorama, Option<Panorama>)> {
    let pano = read_panorama(path)?;
    if pano.channels() != 3 {
        return Err(CliError::Input("panorama must have 3 channels".into()));
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let depth_path = path.with_file_name(format!("{stem}.depth.pfm"));
    let depth = if depth_path.is_file() {
        Some(read_panorama(&depth_path)?)
    } else {
        None
    };
    Ok((pano, depth))
}

pub fn dataset(a: DatasetArgs, cfg: &FileConfig) -> CliResult<()> {
    let seed = pick(a.seed, cfg.seed, 0);
    let crops = pick(a.crops, cfg.crops, DEFAULT_CROPS);
    let n = pick(a.n, cfg.n, DEFAULT_NODES);
    let weighting = pick(a.weighting, cfg.weighting, Weighting::None);
    let fit_w = pick(a.width, cfg.width, DEFAULT_FIT_DIMS.0);
    let fit_h = pick(a.height, cfg.height, DEFAULT_FIT_DIMS.1);
    if crops == 0 {
        return Err(CliError::Input("--crops must be positive".into()));
    }
    let sources = panorama_files(&a.input)?;
    let layout = NodeLayout::new(n).map_err(|e| CliError::Input(e.to_string()))?;
    let basis = FitBasis::new(&layout, fit_w, fit_h, weighting).map_err(|e| CliError::Input(e.to_string()))?;
    std::fs::create_dir_all(&a.output).map_err(|e| failed(format!("{}: {e}", a.output.display())))?;

    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for (index, path) in sources.iter().enumerate() {
        let source = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let (pano, depth) = match load_source(path) {
            Ok(p) => p,
            Err(e) => {
                eprintln!("warning: skipping {source}: {}", e_message(&e));
                skipped.push(SkippedInput {
                    source,
                    reason: e_message(&e).to_string(),
                });
                continue;
            }
        };
        // One stream per input file, so a skipped file leaves the others' crops unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("pano");
        let mut out = Outputs::default();
        let mut entries = Vec::with_capacity(crops);
        for j in 0..crops {
            let spec = CropSpec::random(&mut rng);
            let (sample, light, report) =
                build_sample(&pano, depth.as_ref(), &spec, &basis).map_err(input_err(path))?;
            let name = format!("{stem}_{j:03}");
            let (h, w) = (sample.image.shape()[0], sample.image.shape()[1]);
            let crop = Panorama::new(w, h, 3, sample.image.into_data()).map_err(failed)?;
            let files = [
                format!("{name}.pfm"),
                format!("{name}.light.json"),
                format!("{name}.spec.json"),
            ];
            out.add(&a.output.join(&files[0]), pfm::encode(&crop));
            out.add_json(&a.output.join(&files[1]), &light.to_json())?;
            out.add_json(&a.output.join(&files[2]), &spec)?;
            let [image, light_file, spec_file] = files;
            entries.push(ManifestSample {
                source: source.clone(),
                image,
                light: light_file,
                spec: spec_file,
                crop: spec,
                has_depth: depth.is_some(),
                fit_psnr: report.psnr_reconstruction,
            });
        }
        out.commit()?;
        samples.extend(entries);
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: 1,
        seed,
        n,
        weighting,
        fit_width: fit_w,
        fit_height: fit_h,
        crops_per_panorama: crops,
        samples,
        skipped,
    };
    write_json(&a.output.join("manifest.json"), &manifest)?;
    println!(
        "{} samples from {} panoramas ({} skipped)",
        manifest.samples.len(),
        sources.len(),
        manifest.skipped.len()
    );
    Ok(())
}

fn e_message(e: &CliError) -> &str {
    match e {
        CliError::Input(m) | CliError::Failed(m) => m,
    }
}

fn load_manifest_samples(path: &Path, limit: Option<usize>) -> CliResult<(Manifest, Vec<TrainSample>)> {
    let manifest: Manifest = read_json(path)?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(CliError::Input(format!("{}: not a dataset manifest", path.display())));
    }
    if manifest.samples.is_empty() {
        return Err(CliError::Input(format!(
            "{}: manifest lists no samples",
            path.display()
        )));
    }
    let root = path.parent().unwrap_or(Path::new("."));
    let with_depth = manifest.samples.iter().all(|s| s.has_depth);
    let take = limit.unwrap_or(manifest.samples.len()).min(manifest.samples.len());
    let mut out = Vec::with_capacity(take);
    for s in &manifest.samples[..take] {
        let image_path = root.join(&s.image);
        let image = image_tensor(&read_panorama(&image_path)?).map_err(input_err(&image_path))?;
        let light_path = root.join(&s.light);
        let light = read_light(&light_path)?;
        if light.layout().n() != manifest.n {
            return Err(CliError::Input(format!(
                "{}: expected {} nodes",
                light_path.display(),
                manifest.n
            )));
        }
        let truth = light_to_tensor(&light, with_depth).map_err(input_err(&light_path))?;
        out.push(TrainSample { image, truth });
    }
    Ok((manifest, out))
}

fn model_config_for(samples: &[TrainSample], n: usize, k: usize) -> CliResult<ModelConfig> {
    let shape = samples[0].image.shape().to_vec();
    if let Some(bad) = samples.iter().position(|s| s.image.shape() != shape) {
        return Err(CliError::Input(format!(
            "sample {bad} image size differs from sample 0"
        )));
    }
    let config = ModelConfig {
        n,
        k,
        input_height: shape[0],
        input_width: shape[1],
        with_depth: samples[0].truth.shape()[1] == 4,
        ..ModelConfig::default()
    };
    config.validate().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(config)
}

pub fn train(a: TrainArgs, cfg: &FileConfig) -> CliResult<()> {
    let mut tc = cfg.train.clone().unwrap_or_default();
    tc.seed = pick(a.seed, cfg.seed, tc.seed);
    let default_epochs = if a.overfit_smoke { SMOKE_EPOCHS } else { tc.epochs };
    tc.epochs = pick(a.epochs, cfg.epochs, default_epochs);
    let k = pick(a.k, cfg.k, DEFAULT_K);

    let (samples, n) = match (&a.input, a.overfit_smoke) {
        (Some(path), smoke) => {
            let (manifest, samples) = load_manifest_samples(path, smoke.then_some(SMOKE_SAMPLES))?;
            (samples, manifest.n)
        }
        (None, true) => {
            let layout = NodeLayout::new(DEFAULT_NODES).map_err(failed)?;
            (
                synthetic_dataset(SMOKE_SAMPLES, &layout, tc.seed, true).map_err(failed)?,
                DEFAULT_NODES,
            )
        }
        (None, false) => {
            return Err(CliError::Input(
                "--input is required unless --overfit-smoke is given".into(),
            ))
        }
    };
    let config = model_config_for(&samples, n, k)?;
    tc.validate().map_err(|e| CliError::Input(e.to_string()))?;

    let mut curve: Vec<(usize, f64, f64)> = Vec::with_capacity(tc.epochs);
    let mut reached = None;
    let outcome = train_with(&samples, &config, &tc, |e| {
        curve.push((e.epoch, e.learning_rate, e.mean_loss));
        if e.epoch % 10 == 9 || e.epoch + 1 == tc.epochs {
            eprintln!(
                "epoch {} loss {:.6e} lr {:.3e}",
                e.epoch + 1,
                e.mean_loss,
                e.learning_rate
            );
        }
        if a.overfit_smoke && e.epoch % 10 == 9 {
            let p = reconstruction_psnr(e.model, &samples, DEFAULT_RECON_RES).expect("shapes checked before training");
            if mean(&p) >= SMOKE_TARGET_DB {
                reached = Some(e.epoch + 1);
                return false;
            }
        }
        true
    })
    .map_err(failed)?;

    let checkpoint = Checkpoint::from_model(&outcome.model, Some(&tc)).map_err(failed)?;
    let csv_path = a.loss_csv.unwrap_or_else(|| sibling(&a.output, "loss.csv"));
    let mut csv = String::from("epoch,learning_rate,mean_loss\n");
    for (epoch, lr, loss) in &curve {
        csv.push_str(&format!("{},{lr:e},{loss:e}\n", epoch + 1));
    }
    let mut out = Outputs::default();
    out.add(&a.output, checkpoint.to_json_string().map_err(failed)?.into_bytes());
    out.add(&csv_path, csv.into_bytes());
    out.commit()?;

    let psnr = mean(&reconstruction_psnr(&outcome.model, &samples, DEFAULT_RECON_RES).map_err(failed)?);
    println!(
        "training reconstruction PSNR: {psnr:.2} dB after {} epochs",
        curve.len()
    );
    if a.overfit_smoke && reached.is_none() && psnr < SMOKE_TARGET_DB {
        return Err(CliError::Failed(format!(
            "overfit smoke missed the {SMOKE_TARGET_DB} dB target (reached {psnr:.2} dB in {} epochs)",
            curve.len()
        )));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn infer(a: InferArgs, cfg: &FileConfig) -> CliResult<()> {
    let text = std::fs::read_to_string(&a.checkpoint)
        .map_err(|e| CliError::Input(format!("{}: {e}", a.checkpoint.display())))?;
    let checkpoint = Checkpoint::from_json_str(&text).map_err(input_err(&a.checkpoint))?;
    if a.n.or(cfg.n).is_some() || a.k.or(cfg.k).is_some() {
        let n = pick(a.n, cfg.n, checkpoint.model_config.n);
        let k = pick(a.k, cfg.k, checkpoint.model_config.k);
        let layout = NodeLayout::new(n).map_err(|e| CliError::Input(e.to_string()))?;
        let graph = knn_adjacency(&layout, k).map_err(|e| CliError::Input(e.to_string()))?;
        checkpoint
            .require_graph(&graph)
            .map_err(|e| CliError::Input(format!("refusing checkpoint {}: {e}", a.checkpoint.display())))?;
    }
    let model = checkpoint
        .to_model()
        .map_err(|e| CliError::Input(format!("refusing checkpoint {}: {e}", a.checkpoint.display())))?;

    let raw = read_panorama(&a.input)?;
    if raw.channels() != 3 {
        return Err(CliError::Input(format!(
            "{}: image must have 3 channels",
            a.input.display()
        )));
    }
    let is_hdr = a
        .input
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("hdr"));
    let ldr = if is_hdr { tonemap_ldr(&raw) } else { raw };
    let config = model.config();
    let ldr = if (ldr.width(), ldr.height()) == (config.input_width, config.input_height) {
        ldr
    } else {
        ldr.resample_box(config.input_width, config.input_height)
            .map_err(input_err(&a.input))?
    };
    let image = image_tensor(&ldr).map_err(input_err(&a.input))?;
    let pred = model.model_forward(&image).map_err(failed)?;
    let light = tensor_to_light(&pred, model.layout()).map_err(failed)?;

    let mut out = Outputs::default();
    out.add_json(&a.output, &light.to_json())?;
    if let Some(path) = &a.hdr {
        let w = pick(a.width, cfg.width, 256);
        let h = pick(a.height, cfg.height, 128);
        let pano = reconstruct_panorama(&light, w, h, ChannelSet::Color).map_err(|e| CliError::Input(e.to_string()))?;
        out.add(path, encode_panorama(path, &pano)?);
    }
    out.commit()?;
    Ok(())
}
