//! `analyze`: JPEG files in, one detector score per image out.

use std::fs;
use std::path::{Path, PathBuf};

use blockcompat::detect::{log_lrt, select_blocks, Prior, Priors, Strategy};
use blockcompat::jpeg::{parse_jpeg, quant_table_is_unit};
use blockcompat::search::{search_antecedent, SearchBudget};
use blockcompat::stats::{derive_seed, read_pmaps, LikelihoodTable, PMap};
use blockcompat::{decompress, PipelineSpec, QuantizedBlock};
use rayon::prelude::*;

use crate::config::{parse_list, require_path, Settings};
use crate::experiments::{ensure_matches, load_table, table_id};
use crate::report::{emit, real, Report};
use crate::{AnalyzeArgs, CliError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum StrategyKind {
    Random,
    Variance,
    Sca,
}

enum PriorKind {
    Shared(Prior),
    PMap,
}

struct Plan {
    table: LikelihoodTable,
    strategy: StrategyKind,
    fraction: f64,
    prior: PriorKind,
    pmaps: Option<PathBuf>,
    seed: Option<u64>,
    budget: SearchBudget,
}

struct Scored {
    n_blocks: usize,
    n_unsolved: usize,
    log_lr: f64,
    clipped: usize,
}

fn parse_strategy(s: &str) -> Result<StrategyKind, CliError> {
    match s {
        "random" => Ok(StrategyKind::Random),
        "variance" => Ok(StrategyKind::Variance),
        "sca" => Ok(StrategyKind::Sca),
        other => Err(CliError::Config(format!("unknown strategy `{other}` (random, variance or sca)"))),
    }
}

fn parse_prior(s: &str) -> Result<PriorKind, CliError> {
    match s {
        "uniform" => Ok(PriorKind::Shared(Prior::Uniform)),
        "pmap" => Ok(PriorKind::PMap),
        _ => match s.strip_prefix("custom:") {
            Some(list) => {
                let prior = Prior::Custom(parse_list(list, "prior probability")?);
                prior.pmf().map_err(|e| CliError::Config(e.to_string()))?;
                Ok(PriorKind::Shared(prior))
            }
            None => Err(CliError::Config(format!("unknown prior `{s}` (uniform, pmap or custom:p0,p1,…)"))),
        },
    }
}

/// Files as given, directories expanded to their `.jpg`/`.jpeg` entries in
/// name order.
fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.is_file()
                        && f.extension()
                            .and_then(|x| x.to_str())
                            .is_some_and(|x| x.eq_ignore_ascii_case("jpg") || x.eq_ignore_ascii_case("jpeg"))
                })
                .collect();
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(CliError::Config(format!("input {} does not exist", p.display())));
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("no input images".into()));
    }
    Ok(out)
}

pub fn run(args: &AnalyzeArgs, settings: &Settings) -> Result<(), CliError> {
    let file = &settings.file;
    let table_path = require_path(args.table.clone().or_else(|| file.table.clone()), "likelihood table")?;
    let table = load_table(&table_path)?;
    let strategy = parse_strategy(args.strategy.as_deref().or(file.strategy.as_deref()).unwrap_or("random"))?;
    let prior = parse_prior(args.prior.as_deref().or(file.prior.as_deref()).unwrap_or("uniform"))?;
    let fraction = args.fraction.or(file.fraction).unwrap_or(1.0);
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CliError::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    let needs_pmaps = strategy == StrategyKind::Sca || matches!(prior, PriorKind::PMap);
    let pmaps = match args.pmaps.clone().or_else(|| file.pmaps.clone()) {
        Some(p) => Some(require_path(Some(p), "p-map directory")?),
        None if needs_pmaps => return Err(CliError::Config("strategy sca and prior pmap need --pmaps".into())),
        None => None,
    };
    let seed = match strategy {
        StrategyKind::Random => Some(settings.require_seed("analyze with random selection")?),
        _ => settings.seed,
    };
    let inputs = if args.inputs.is_empty() {
        file.inputs.clone().unwrap_or_default()
    } else {
        args.inputs.clone()
    };
    let images = expand_inputs(&inputs)?;
    let continue_on_error = args.continue_on_error || file.continue_on_error.unwrap_or(false);
    let plan = Plan {
        table,
        strategy,
        fraction,
        prior,
        pmaps,
        seed,
        budget: SearchBudget::new(settings.budget).map_err(|e| CliError::Config(e.to_string()))?,
    };

    let mut report = Report::new(
        "analyze",
        &["path", "status", "n_blocks", "n_unsolved", "log_lr", "clipped_excluded"],
    );
    report
        .meta("table", table_id(&plan.table))
        .meta("variant", settings.variant)
        .meta("level_shift", settings.level_shift)
        .meta("budget", settings.budget)
        .meta("strategy", args.strategy.as_deref().or(file.strategy.as_deref()).unwrap_or("random"))
        .meta("fraction", fraction)
        .meta("prior", args.prior.as_deref().or(file.prior.as_deref()).unwrap_or("uniform"))
        .meta("seed", seed.map_or("-".to_string(), |s| s.to_string()));
    let mut pipelines: Vec<String> = Vec::new();
    for (i, path) in images.iter().enumerate() {
        match score_image(path, i as u64, &plan, settings, &mut pipelines) {
            Ok(s) => report.row(vec![
                path.display().to_string(),
                "ok".into(),
                s.n_blocks.to_string(),
                s.n_unsolved.to_string(),
                real(s.log_lr),
                s.clipped.to_string(),
            ]),
            Err(CliError::Parse(msg)) if continue_on_error => {
                eprintln!("blockcompat: skipping {msg}");
                let dash = || "-".to_string();
                report.row(vec![path.display().to_string(), "failed".into(), dash(), dash(), dash(), dash()]);
            }
            Err(e) => return Err(e),
        }
    }
    report.meta("pipeline", pipelines.join(","));
    emit(settings.output.as_deref(), &report.render())
}

fn score_image(
    path: &Path,
    index: u64,
    plan: &Plan,
    settings: &Settings,
    pipelines: &mut Vec<String>,
) -> Result<Scored, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let image = parse_jpeg(&bytes).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    if !quant_table_is_unit(&image.quant) {
        eprintln!(
            "blockcompat: warning: {} is not quantized with unit steps; compatibility attacks are weak there",
            path.display()
        );
    }
    let spec = PipelineSpec::new(settings.variant, settings.level_shift, image.quant.clone())
        .map_err(|e| CliError::Config(e.to_string()))?;
    ensure_matches(&plan.table, &spec)?;
    if !pipelines.contains(&spec.id()) {
        pipelines.push(spec.id());
    }

    let image_pmaps = match &plan.pmaps {
        Some(dir) => Some(load_pmaps(dir, path, image.blocks.len())?),
        None => None,
    };
    // Full blocks whose decompression stays in range.
    let mut candidates: Vec<usize> = Vec::new();
    let mut clipped = 0;
    for b in image.full_blocks() {
        let dec = decompress(&image.blocks[b], &spec).map_err(|e| CliError::Failed(e.to_string()))?;
        if dec.clipped {
            clipped += 1;
        } else {
            candidates.push(b);
        }
    }
    if candidates.is_empty() {
        return Err(CliError::Parse(format!("{}: no unclipped full blocks", path.display())));
    }
    let coeffs: Vec<QuantizedBlock> = candidates.iter().map(|&b| image.blocks[b].clone()).collect();
    let cand_pmaps: Option<Vec<PMap>> = image_pmaps
        .as_ref()
        .map(|p| candidates.iter().map(|&b| p[b].clone()).collect());
    let strategy = match plan.strategy {
        StrategyKind::Random => Strategy::Random {
            seed: derive_seed(plan.seed.expect("random selection has a seed"), index),
        },
        StrategyKind::Variance => Strategy::VarianceDescending,
        StrategyKind::Sca => Strategy::ScaDescending(cand_pmaps.as_deref().expect("checked at load")),
    };
    let chosen = select_blocks(&coeffs, &spec, &strategy, plan.fraction).map_err(|e| CliError::Failed(e.to_string()))?;

    let t = chosen
        .par_iter()
        .map(|&i| search_antecedent(&coeffs[i], &spec, plan.budget).map(|o| !o.is_compatible()))
        .collect::<Result<Vec<bool>, _>>()
        .map_err(|e| CliError::Failed(e.to_string()))?;
    let score = match &plan.prior {
        PriorKind::Shared(p) => log_lrt(&t, &plan.table, &spec, Priors::Shared(p)),
        PriorKind::PMap => {
            let maps = cand_pmaps.as_ref().expect("checked at load");
            let per: Vec<Prior> = chosen.iter().map(|&i| Prior::PoissonBinomial(maps[i].clone())).collect();
            log_lrt(&t, &plan.table, &spec, Priors::PerBlock(&per))
        }
    }
    .map_err(|e| CliError::Failed(e.to_string()))?;
    Ok(Scored {
        n_blocks: t.len(),
        n_unsolved: t.iter().filter(|&&u| u).count(),
        log_lr: score.log_lr,
        clipped,
    })
}

/// `<dir>/<stem>.pmap`: one p-map per block, raster order, partial edge
/// blocks included.
fn load_pmaps(dir: &Path, image: &Path, n_blocks: usize) -> Result<Vec<PMap>, CliError> {
    let stem = image.file_stem().unwrap_or_default();
    let path = dir.join(stem).with_extension("pmap");
    let text = fs::read_to_string(&path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let maps = read_pmaps(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    if maps.len() != n_blocks {
        return Err(CliError::Parse(format!(
            "{}: {} p-maps for {n_blocks} blocks",
            path.display(),
            maps.len()
        )));
    }
    Ok(maps)
}
