//! Experiment commands: `likelihood-build`, `heatmap` and `simulate`.

use std::path::Path;

use blockcompat::detect::{check_pipeline, simulate_detection, Embedding, Selection, SimulationConfig};
use blockcompat::search::SearchBudget;
use blockcompat::stats::{
    build_likelihood_table, position_heatmap, read_pmaps, CoverSource, LikelihoodTable, TableConfig,
    DEFAULT_M_MAX,
};
use blockcompat::{Dims, PipelineSpec};

use crate::config::{parse_list, read_existing, require_path, Settings};
use crate::report::{emit, real, Report};
use crate::{CliError, HeatmapArgs, LikelihoodArgs, SimulateArgs, SourceArgs};

const DEFAULT_TABLE_SAMPLES: usize = 1000;
const DEFAULT_HEATMAP_SAMPLES: usize = 100;
const DEFAULT_PAYLOADS: &str = "0,0.001,0.002,0.005,0.01,0.02,0.03";
const DEFAULT_IMAGES: usize = 1000;
const DEFAULT_BLOCKS_PER_IMAGE: usize = 1024;

fn cover_source(args: &SourceArgs, settings: &Settings, seed: u64) -> Result<CoverSource, CliError> {
    let kind = args
        .source
        .clone()
        .or_else(|| settings.file.source.clone())
        .unwrap_or_else(|| "uniform".into());
    match kind.as_str() {
        "uniform" => Ok(CoverSource::Uniform { seed }),
        "smooth" => Ok(CoverSource::Smooth { seed }),
        "images" => {
            let paths = if args.images.is_empty() {
                settings.file.images.clone().unwrap_or_default()
            } else {
                args.images.clone()
            };
            if paths.is_empty() {
                return Err(CliError::Config("source `images` needs at least one --image".into()));
            }
            let mut blocks = Vec::new();
            for p in paths {
                let p = require_path(Some(p), "image")?;
                match CoverSource::from_image(&p).map_err(|e| CliError::Parse(e.to_string()))? {
                    CoverSource::Blocks(b) => blocks.extend(b),
                    _ => unreachable!("from_image yields blocks"),
                }
            }
            Ok(CoverSource::Blocks(blocks))
        }
        other => Err(CliError::Config(format!("unknown cover source `{other}`"))),
    }
}

fn budget(settings: &Settings) -> Result<SearchBudget, CliError> {
    SearchBudget::new(settings.budget).map_err(|e| CliError::Config(e.to_string()))
}

fn samples(args: &SourceArgs, settings: &Settings, default: usize) -> Result<usize, CliError> {
    let n = args.samples.or(settings.file.samples).unwrap_or(default);
    if n == 0 {
        return Err(CliError::Config("samples must be positive".into()));
    }
    Ok(n)
}

pub fn likelihood(args: &LikelihoodArgs, settings: &Settings) -> Result<(), CliError> {
    let seed = settings.require_seed("likelihood-build")?;
    let spec = settings.pipeline(Dims::STANDARD)?;
    let source = cover_source(&args.source, settings, seed)?;
    let config = TableConfig {
        budget: budget(settings)?,
        m_max: args.m_max.or(settings.file.m_max).unwrap_or(DEFAULT_M_MAX),
        samples_per_m: samples(&args.source, settings, DEFAULT_TABLE_SAMPLES)?,
        seed,
    };
    let build = build_likelihood_table(&source, &spec, config).map_err(|e| CliError::Failed(e.to_string()))?;
    for row in &build.table.rows {
        eprintln!("m={} unsolved {}/{} ({:.4})", row.m, row.unsolved, row.samples, row.ratio());
    }
    emit(settings.output.as_deref(), &build.table.to_text())?;

    if let Some(path) = &args.traces {
        let mut r = Report::new("likelihood-build traces", &["m", "budget", "unsolved_ratio"]);
        r.meta("pipeline", spec.id()).meta("seed", seed).meta("source", source.describe());
        for t in &build.traces {
            for &(b, ratio) in &t.points {
                r.row(vec![t.m.to_string(), b.to_string(), real(ratio)]);
            }
        }
        emit(Some(path), &r.render())?;
    }
    if let Some(path) = &args.records {
        let mut r = Report::new(
            "likelihood-build records",
            &["m", "cover_index", "solved", "iterations", "variance"],
        );
        r.meta("pipeline", spec.id()).meta("seed", seed).meta("source", source.describe());
        for s in &build.records {
            r.row(vec![
                s.m.to_string(),
                s.cover_index.to_string(),
                u8::from(s.solved).to_string(),
                s.iterations.to_string(),
                real(s.variance),
            ]);
        }
        emit(Some(path), &r.render())?;
    }
    Ok(())
}

pub fn heatmap(args: &HeatmapArgs, settings: &Settings) -> Result<(), CliError> {
    let seed = settings.require_seed("heatmap")?;
    let spec = settings.pipeline(Dims::STANDARD)?;
    let source = cover_source(&args.source, settings, seed)?;
    let n = samples(&args.source, settings, DEFAULT_HEATMAP_SAMPLES)?;
    let map = position_heatmap(&source, &spec, budget(settings)?, n, seed)
        .map_err(|e| CliError::Failed(e.to_string()))?;

    let mut r = Report::new("heatmap", &["position", "row", "col", "ratio", "plus", "minus"]);
    r.meta("pipeline", spec.id())
        .meta("budget", settings.budget)
        .meta("seed", seed)
        .meta("source", source.describe())
        .meta("trials_per_sign", map.trials_per_sign);
    for (name, u) in [
        ("uniformity", &map.uniformity),
        ("uniformity_plus", &map.uniformity_plus),
        ("uniformity_minus", &map.uniformity_minus),
    ] {
        r.meta(name, format!("chi2={} dof={} p={}", real(u.statistic), u.dof, real(u.p_value)));
    }
    for p in 0..map.ratios.len() {
        r.row(vec![
            p.to_string(),
            (p / 8).to_string(),
            (p % 8).to_string(),
            real(map.ratios[p]),
            real(map.plus[p]),
            real(map.minus[p]),
        ]);
    }
    emit(settings.output.as_deref(), &r.render())
}

pub fn load_table(path: &Path) -> Result<LikelihoodTable, CliError> {
    LikelihoodTable::from_text(&read_existing(path)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn ensure_matches(table: &LikelihoodTable, spec: &PipelineSpec) -> Result<(), CliError> {
    check_pipeline(table, spec).map_err(|e| CliError::Mismatch(e.to_string()))
}

pub fn simulate(args: &SimulateArgs, settings: &Settings) -> Result<(), CliError> {
    let seed = settings.require_seed("simulate")?;
    let table_path = require_path(args.table.clone().or_else(|| settings.file.table.clone()), "likelihood table")?;
    let table = load_table(&table_path)?;
    let spec = settings.pipeline(table.dims)?;
    ensure_matches(&table, &spec)?;

    let fractions = match &args.fractions {
        Some(s) => parse_list::<f64>(s, "fraction")?,
        None => settings.file.fractions.clone().unwrap_or_else(|| vec![1.0]),
    };
    let selections = match &args.selections {
        Some(s) => parse_list::<String>(s, "selection")?,
        None => settings.file.selections.clone().unwrap_or_else(|| vec!["random".into()]),
    }
    .into_iter()
    .map(|s| match s.as_str() {
        "random" => Ok((s, Selection::Random)),
        "sca" => Ok((s, Selection::Sca)),
        other => Err(CliError::Config(format!("unknown selection `{other}` (random or sca)"))),
    })
    .collect::<Result<Vec<_>, _>>()?;
    let images = args.images.or(settings.file.n_images).unwrap_or(DEFAULT_IMAGES);
    let blocks_per_image = args
        .blocks_per_image
        .or(settings.file.blocks_per_image)
        .unwrap_or(DEFAULT_BLOCKS_PER_IMAGE);

    let pmaps = match args.pmap_file.clone().or_else(|| settings.file.pmap_file.clone()) {
        Some(p) => {
            let p = require_path(Some(p), "p-map file")?;
            Some(read_pmaps(&read_existing(&p)?).map_err(|e| CliError::Parse(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let embeddings: Vec<(String, Embedding<'_>)> = match &pmaps {
        Some(p) => vec![("pmaps".into(), Embedding::PMaps(p))],
        None => {
            let payloads = match &args.payloads {
                Some(s) => parse_list::<f64>(s, "payload")?,
                None => match &settings.file.payloads {
                    Some(p) => p.clone(),
                    None => parse_list::<f64>(DEFAULT_PAYLOADS, "payload")?,
                },
            };
            payloads
                .into_iter()
                .map(|p| (p.to_string(), Embedding::Lsbm { payload_bpp: p }))
                .collect()
        }
    };

    let mut summary = Report::new(
        "simulate",
        &["payload", "selection", "fraction", "n_blocks", "p_e", "zero_fa_power"],
    );
    summary
        .meta("pipeline", spec.id())
        .meta("table", table_id(&table))
        .meta("seed", seed)
        .meta("images", images)
        .meta("blocks_per_image", blocks_per_image);
    let mut roc = Report::new("simulate roc", &["payload", "selection", "fraction", "threshold", "p_fa", "power"]);
    roc.meta("pipeline", spec.id()).meta("table", table_id(&table)).meta("seed", seed);

    for (label, embedding) in &embeddings {
        for (sel_name, selection) in &selections {
            for &fraction in &fractions {
                let config = SimulationConfig {
                    images,
                    blocks_per_image,
                    selection: *selection,
                    fraction,
                    seed,
                };
                let result = simulate_detection(&table, embedding, &config).map_err(|e| CliError::Config(e.to_string()))?;
                summary.row(vec![
                    label.clone(),
                    sel_name.clone(),
                    fraction.to_string(),
                    result.n_blocks_used.to_string(),
                    real(result.roc.p_e),
                    real(result.zero_fa_power),
                ]);
                for p in &result.roc.points {
                    roc.row(vec![
                        label.clone(),
                        sel_name.clone(),
                        fraction.to_string(),
                        p.threshold.to_string(),
                        real(p.p_fa),
                        real(p.power),
                    ]);
                }
            }
        }
    }
    emit(settings.output.as_deref(), &summary.render())?;
    if let Some(path) = &args.roc {
        emit(Some(path), &roc.render())?;
    }
    Ok(())
}

/// Identifies a table in report preambles.
pub fn table_id(t: &LikelihoodTable) -> String {
    format!("{} budget={} seed={} source={} m_max={}", t.pipeline_id, t.budget, t.seed, t.source, t.m_max())
}
