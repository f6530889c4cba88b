use dsglight::fitter::{fit_light, FitOptions, Weighting, DEFAULT_FIT_DIMS};
use dsglight::panorama::{pixel_to_direction, psnr};
use dsglight::sg_model::{reconstruct_panorama, warp_probe, ChannelSet, IrradianceEvaluator, WarpOptions};
use dsglight::sphere_layout::knn_adjacency;
use dsglight::{NodeLayout, Panorama, DEFAULT_K, DEFAULT_NODES};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{pick, FileConfig};
use crate::io::{encode_panorama, read_light, read_panorama, sibling, write_atomic, Outputs};
use crate::{
    failed, input_err, CliError, CliResult, FitArgs, IrradianceArgs, MetricsArgs, NodesArgs, ProbeArgs, ReconstructArgs,
};

const DEFAULT_RENDER: (usize, usize) = (256, 128);
const DEFAULT_SAMPLES: usize = 1024;

fn usage(e: dsglight::Error) -> CliError {
    CliError::Input(e.to_string())
}

pub fn fit(a: FitArgs, cfg: &FileConfig) -> CliResult<()> {
    let n = pick(a.n, cfg.n, DEFAULT_NODES);
    let weighting = pick(a.weighting, cfg.weighting, Weighting::None);
    let dims = (
        pick(a.width, cfg.width, DEFAULT_FIT_DIMS.0),
        pick(a.height, cfg.height, DEFAULT_FIT_DIMS.1),
    );
    let pano = read_panorama(&a.input)?;
    let depth = a.depth.as_deref().map(read_panorama).transpose()?;
    let layout = NodeLayout::new(n).map_err(usage)?;
    let fit = fit_light(
        &pano,
        depth.as_ref(),
        &layout,
        FitOptions {
            weighting,
            max_dims: dims,
        },
    )
    .map_err(input_err(&a.input))?;

    let report_path = a.report.unwrap_or_else(|| sibling(&a.output, "report.json"));
    let mut out = Outputs::default();
    out.add_json(&a.output, &fit.light.to_json())?;
    out.add_json(&report_path, &fit.report)?;
    out.commit()?;
    for w in &fit.report.warnings {
        eprintln!("warning: {w}");
    }
    println!("reconstruction PSNR: {:.2} dB", fit.report.psnr_reconstruction);
    Ok(())
}

pub fn reconstruct(a: ReconstructArgs, cfg: &FileConfig) -> CliResult<()> {
    let light = read_light(&a.input)?;
    let w = pick(a.width, cfg.width, DEFAULT_RENDER.0);
    let h = pick(a.height, cfg.height, DEFAULT_RENDER.1);
    let mut out = Outputs::default();
    let rgb = reconstruct_panorama(&light, w, h, ChannelSet::Color).map_err(usage)?;
    out.add(&a.output, encode_panorama(&a.output, &rgb)?);
    if let Some(path) = &a.depth {
        let d = reconstruct_panorama(&light, w, h, ChannelSet::Depth).map_err(input_err(&a.input))?;
        out.add(path, dsglight::panorama::pfm::encode(&d));
    }
    out.commit()?;
    Ok(())
}

pub fn render_irradiance(a: IrradianceArgs, cfg: &FileConfig) -> CliResult<()> {
    let light = read_light(&a.input)?;
    let w = pick(a.width, cfg.width, DEFAULT_RENDER.0);
    let h = pick(a.height, cfg.height, DEFAULT_RENDER.1);
    let samples = pick(a.samples, cfg.samples, DEFAULT_SAMPLES);
    if w == 0 || h == 0 {
        return Err(CliError::Input("width and height must be positive".into()));
    }
    let eval = IrradianceEvaluator::new(&light, samples).map_err(usage)?;
    let mut pixels = vec![0.0; w * h * 3];
    pixels.par_chunks_mut(w * 3).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let v = pixel_to_direction(x, y, w, h).expect("pixel in range");
            row[x * 3..x * 3 + 3].copy_from_slice(&eval.irradiance(v));
        }
    });
    let pano = Panorama::new(w, h, 3, pixels).map_err(failed)?;
    write_atomic(&a.output, &encode_panorama(&a.output, &pano)?)
}

pub fn probe(a: ProbeArgs) -> CliResult<()> {
    let light = read_light(&a.input)?;
    let opts = WarpOptions {
        rescale_sharpness: a.rescale_sharpness,
    };
    let warped = warp_probe(&light, a.offset, opts).map_err(input_err(&a.input))?;
    crate::io::write_json(&a.output, &warped.to_json())
}

pub fn metrics(a: MetricsArgs) -> CliResult<()> {
    let test = read_panorama(&a.input)?;
    let reference = read_panorama(&a.reference)?;
    let db = psnr(&test, &reference).map_err(usage)?;
    println!("{db:.2} dB");
    Ok(())
}

#[derive(Serialize)]
struct NodesDoc {
    n: usize,
    k: usize,
    lambda: f64,
    nodes: Vec<NodeDoc>,
}

#[derive(Serialize)]
struct NodeDoc {
    index: usize,
    axis: [f64; 3],
    /// Neighbours in the symmetrized k-NN graph.
    neighbors: Vec<usize>,
}

pub fn nodes(a: NodesArgs, cfg: &FileConfig) -> CliResult<()> {
    let n = pick(a.n, cfg.n, DEFAULT_NODES);
    let k = pick(a.k, cfg.k, DEFAULT_K);
    let layout = NodeLayout::new(n).map_err(usage)?;
    let graph = knn_adjacency(&layout, k).map_err(usage)?;
    let export = layout.to_export();
    let doc = NodesDoc {
        n,
        k,
        lambda: export.lambda,
        nodes: export
            .nodes
            .into_iter()
            .map(|node| NodeDoc {
                neighbors: (0..n).filter(|&j| graph.adjacency.get(node.index, j)).collect(),
                index: node.index,
                axis: node.axis,
            })
            .collect(),
    };
    match &a.output {
        Some(path) => crate::io::write_json(path, &doc),
        None => {
            println!("{}", serde_json::to_string_pretty(&doc).map_err(failed)?);
            Ok(())
        }
    }
}
