//! Single-block commands: `antecedent`, `ilp-export` and `toy-demo`.

use std::fs;
use std::path::Path;

use blockcompat::codec::toy_enumerate;
use blockcompat::format::{decode_binary, read_quantized_text, write_text};
use blockcompat::ilp::{build_model, export_model, solve_feasibility, FeasibilityOutcome, ModelFormat};
use blockcompat::search::{search_antecedent, SearchBudget, SearchOutcome};
use blockcompat::{Dims, PipelineSpec, QuantizedBlock};
use rayon::prelude::*;

use crate::config::{parse_list, Settings};
use crate::report::{emit, real, Report};
use crate::{AntecedentArgs, CliError, IlpExportArgs, ToyArgs};

/// Node budget of the toy cross-check; far more than any toy model needs.
const TOY_ILP_NODES: u64 = 100_000;

pub fn read_coefficients(path: &Path) -> Result<Vec<QuantizedBlock>, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "bcfx") {
        decode_binary(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        read_quantized_text(&text)
    };
    let blocks = parsed.map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    if blocks.is_empty() {
        return Err(CliError::Parse(format!("{}: no blocks", path.display())));
    }
    Ok(blocks)
}

fn pick(blocks: Vec<QuantizedBlock>, index: Option<usize>) -> Result<Vec<(usize, QuantizedBlock)>, CliError> {
    match index {
        None => Ok(blocks.into_iter().enumerate().collect()),
        Some(i) if i < blocks.len() => Ok(vec![(i, blocks[i].clone())]),
        Some(i) => Err(CliError::Config(format!("block {i} out of range ({} blocks)", blocks.len()))),
    }
}

pub fn antecedent(args: &AntecedentArgs, settings: &Settings) -> Result<(), CliError> {
    let blocks = read_coefficients(&args.coefficients)?;
    let spec = settings.pipeline(blocks[0].dims())?;
    let budget = SearchBudget::new(settings.budget).map_err(|e| CliError::Config(e.to_string()))?;
    let chosen = pick(blocks, args.block)?;
    let outcomes = chosen
        .par_iter()
        .map(|(_, c)| search_antecedent(c, &spec, budget))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Failed(e.to_string()))?;

    let mut report = Report::new("antecedent", &["block", "status", "iterations", "metric", "antecedent"]);
    report
        .meta("pipeline", spec.id())
        .meta("input", args.coefficients.display())
        .meta("budget", settings.budget);
    for ((i, _), outcome) in chosen.iter().zip(&outcomes) {
        let (status, metric, pixels) = match outcome {
            SearchOutcome::Compatible { antecedent, final_metric, .. } => {
                let px = write_text(std::slice::from_ref(antecedent));
                let px: Vec<&str> = px.lines().skip(1).collect();
                ("compatible", *final_metric, px.join(" "))
            }
            SearchOutcome::Exhausted { best_metric, queue_drained, .. } => {
                let status = if *queue_drained { "incompatible" } else { "unsolved" };
                (status, *best_metric, "-".to_string())
            }
        };
        report.row(vec![
            i.to_string(),
            status.into(),
            outcome.iterations().to_string(),
            real(metric),
            pixels,
        ]);
    }
    emit(settings.output.as_deref(), &report.render())
}

pub fn ilp_export(args: &IlpExportArgs, settings: &Settings) -> Result<(), CliError> {
    let blocks = read_coefficients(&args.coefficients)?;
    let spec = settings.pipeline(blocks[0].dims())?;
    let (_, target) = pick(blocks, Some(args.block))?.remove(0);
    let model = build_model(&target, &spec).map_err(|e| CliError::Config(e.to_string()))?;
    let lp = export_model(&model, ModelFormat::LpText);
    match &settings.output {
        Some(p) => fs::write(p, &lp).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        None => emit(None, &String::from_utf8_lossy(&lp))?,
    }
    if let Some(nodes) = args.solve {
        let outcome = solve_feasibility(&model, nodes).map_err(|e| CliError::Config(e.to_string()))?;
        eprintln!("block {}: {}", args.block, describe(&outcome));
    }
    Ok(())
}

fn describe(outcome: &FeasibilityOutcome) -> String {
    match outcome {
        FeasibilityOutcome::Feasible { .. } => "feasible".into(),
        FeasibilityOutcome::Infeasible { nodes_explored } => format!("infeasible ({nodes_explored} nodes)"),
        FeasibilityOutcome::BudgetExceeded { nodes_explored, best_bound } => {
            format!("undecided after {nodes_explored} nodes (bound {best_bound:.6})")
        }
    }
}

struct ToyVerdict {
    dc: i32,
    ac: i32,
    antecedents: u32,
    search: bool,
    ilp: Option<bool>,
}

pub fn toy_demo(args: &ToyArgs, settings: &Settings) -> Result<(), CliError> {
    let steps: Vec<u16> = parse_list(&args.steps, "step")?;
    let steps: [u16; 2] = steps
        .try_into()
        .map_err(|_| CliError::Config("--steps takes exactly two values".into()))?;
    let spec = PipelineSpec::toy(steps).map_err(|e| CliError::Config(e.to_string()))?;
    let atlas = toy_enumerate(&spec).map_err(|e| CliError::Failed(e.to_string()))?;
    // The toy search space is tiny, so run every search to completion.
    let budget = SearchBudget::new(u64::MAX).expect("nonzero");
    let targets: Vec<QuantizedBlock> = atlas.box_blocks().collect();
    let verdicts = targets
        .par_iter()
        .map(|c| toy_verdict(c, &spec, budget, atlas.antecedents(c)))
        .collect::<Result<Vec<_>, _>>()?;

    let search_disagree = verdicts.iter().filter(|v| v.search != (v.antecedents > 0)).count();
    let ilp_disagree = verdicts
        .iter()
        .filter(|v| v.ilp.is_some_and(|f| f != (v.antecedents > 0)))
        .count();
    let ilp_undecided = verdicts.iter().filter(|v| v.ilp.is_none()).count();
    let ((dc_lo, dc_hi), (ac_lo, ac_hi)) = atlas.bounding_box();

    let mut report = Report::new("toy-demo", &["quantity", "value"]);
    report.meta("pipeline", spec.id()).meta("steps", format!("{},{}", steps[0], steps[1]));
    let mut put = |k: &str, v: String| report.row(vec![k.into(), v]);
    put("dc_range", format!("{dc_lo}..{dc_hi}"));
    put("ac_range", format!("{ac_lo}..{ac_hi}"));
    put("box_size", atlas.box_size().to_string());
    put("reachable", atlas.reachable().to_string());
    put("incompatible_in_box", (atlas.box_size() - atlas.reachable()).to_string());
    put("search_disagreements", search_disagree.to_string());
    put("ilp_disagreements", ilp_disagree.to_string());
    put("ilp_undecided", ilp_undecided.to_string());
    emit(settings.output.as_deref(), &report.render())?;

    if let Some(path) = &args.map {
        let mut map = Report::new("toy-demo map", &["dc", "ac", "antecedents", "search", "ilp"]);
        map.meta("pipeline", spec.id());
        for v in &verdicts {
            let ilp = match v.ilp {
                Some(true) => "feasible",
                Some(false) => "infeasible",
                None => "undecided",
            };
            let search = if v.search { "compatible" } else { "incompatible" };
            map.row(vec![
                v.dc.to_string(),
                v.ac.to_string(),
                v.antecedents.to_string(),
                search.into(),
                ilp.into(),
            ]);
        }
        emit(Some(path), &map.render())?;
    }
    Ok(())
}

fn toy_verdict(c: &QuantizedBlock, spec: &PipelineSpec, budget: SearchBudget, antecedents: u32) -> Result<ToyVerdict, CliError> {
    debug_assert_eq!(c.dims(), Dims::TOY);
    let search = search_antecedent(c, spec, budget)
        .map_err(|e| CliError::Failed(e.to_string()))?
        .is_compatible();
    let model = build_model(c, spec).map_err(|e| CliError::Failed(e.to_string()))?;
    let ilp = match solve_feasibility(&model, TOY_ILP_NODES).map_err(|e| CliError::Failed(e.to_string()))? {
        FeasibilityOutcome::Feasible { .. } => Some(true),
        FeasibilityOutcome::Infeasible { .. } => Some(false),
        FeasibilityOutcome::BudgetExceeded { .. } => None,
    };
    let v = c.values();
    Ok(ToyVerdict {
        dc: v[0],
        ac: v[1],
        antecedents,
        search,
        ilp,
    })
}
