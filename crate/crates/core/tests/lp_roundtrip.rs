//! Reads exported LP text back with a tiny independent parser and checks it
//! against known antecedents and the toy enumeration.

use blockcompat::codec::{toy_enumerate, DctVariant};
use blockcompat::ilp::{build_model, export_model, ModelFormat};
use blockcompat::stats::{collect_covers, CoverSource};
use blockcompat::PipelineSpec;

struct Row {
    coeffs: Vec<(usize, f64)>,
    ge: bool,
    rhs: f64,
}

struct Lp {
    rows: Vec<Row>,
    bounds: Vec<(i64, i64)>,
    integers: usize,
}

fn parse(text: &str) -> Lp {
    let mut section = "";
    let mut lp = Lp {
        rows: Vec::new(),
        bounds: Vec::new(),
        integers: 0,
    };
    for line in text.lines() {
        let t = line.trim();
        match t {
            "Minimize" | "Subject To" | "Bounds" | "General" | "End" => {
                section = t;
                continue;
            }
            _ if t.starts_with('\\') || t.is_empty() => continue,
            _ => {}
        }
        match section {
            "Subject To" => {
                let (_, body) = t.split_once(':').unwrap();
                let toks: Vec<&str> = body.split_whitespace().collect();
                let n = toks.len();
                let mut coeffs = Vec::new();
                for chunk in toks[..n - 2].chunks(3) {
                    let sign = if chunk[0] == "-" { -1.0 } else { 1.0 };
                    let c: f64 = chunk[1].parse().unwrap();
                    let var: usize = chunk[2].strip_prefix("k_").unwrap().parse().unwrap();
                    coeffs.push((var, sign * c));
                }
                lp.rows.push(Row {
                    coeffs,
                    ge: toks[n - 2] == ">=",
                    rhs: toks[n - 1].parse().unwrap(),
                });
            }
            "Bounds" => {
                let toks: Vec<&str> = t.split_whitespace().collect();
                lp.bounds.push((toks[0].parse().unwrap(), toks[4].parse().unwrap()));
            }
            "General" => lp.integers += t.split_whitespace().count(),
            _ => {}
        }
    }
    lp
}

fn satisfied(lp: &Lp, k: &[i64], tol: f64) -> bool {
    let in_box = lp.bounds.iter().zip(k).all(|(&(lo, hi), &v)| lo <= v && v <= hi);
    in_box
        && lp.rows.iter().all(|r| {
            let lhs: f64 = r.coeffs.iter().map(|&(p, c)| c * k[p] as f64).sum();
            if r.ge {
                lhs >= r.rhs - tol
            } else {
                lhs <= r.rhs + tol
            }
        })
}

#[test]
fn cover_pixels_satisfy_the_exported_model() {
    let spec = PipelineSpec::standard(DctVariant::Naive);
    for cover in collect_covers(&CoverSource::Uniform { seed: 12 }, &spec, 0, 40).unwrap() {
        let model = build_model(&cover.coefficients, &spec).unwrap();
        let lp = parse(&String::from_utf8(export_model(&model, ModelFormat::LpText)).unwrap());
        assert_eq!(lp.rows.len(), 128);
        assert_eq!(lp.bounds.len(), 64);
        assert_eq!(lp.integers, 64);
        let k: Vec<i64> = model
            .reference()
            .iter()
            .zip(cover.pixels.values())
            .map(|(&r, &x)| i64::from(r) - i64::from(x))
            .collect();
        assert!(satisfied(&lp, &k, 1e-9), "cover {} violates its own model", cover.index);
    }
}

#[test]
fn toy_lp_feasibility_matches_enumeration() {
    for steps in [[1, 1], [2, 3]] {
        let spec = PipelineSpec::toy(steps).unwrap();
        let atlas = toy_enumerate(&spec).unwrap();
        for c in atlas.box_blocks().step_by(53) {
            let lp = parse(&String::from_utf8(export_model(&build_model(&c, &spec).unwrap(), ModelFormat::LpText)).unwrap());
            let (b0, b1) = (lp.bounds[0], lp.bounds[1]);
            let feasible = (b0.0..=b0.1).any(|a| (b1.0..=b1.1).any(|b| satisfied(&lp, &[a, b], 0.0)));
            assert_eq!(feasible, atlas.is_compatible(&c), "{steps:?} {:?}", c.values());
        }
    }
}
