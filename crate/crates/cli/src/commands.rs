//! The four verbs. Each reads its keys from the config, computes, then writes.

use std::path::Path;

use hypobridge::bridge::{sample_bridge, BridgeConfig, BridgeEnsemble, Quartiles, ScoreSource};
use hypobridge::config::{geometry_from_config, positive, KvConfig};
use hypobridge::geometry::{Geometry, Point, SubRiemannianModel};
use hypobridge::levy::{LevyMethod, NoiseSpec};
use hypobridge::net::NetworkParams;
use hypobridge::rng::{labels, RngStream};
use hypobridge::sim::{sample_batch, Grid, PathSample, Scheme};
use hypobridge::train::{train_from, TrainingConfig};
use hypobridge::{Error, Result};
use nalgebra::DVector;
use serde_json::{json, Value};

use crate::output::{num, Outputs};
use crate::svg::{self, Arrow, Panel, Series};

/// Default points per axis of a score grid.
pub const GRID_COUNT: usize = 11;

fn coord_names(g: &Geometry) -> Vec<String> {
    match g.as_heisenberg() {
        Some(h) if h.k == 1 => vec!["x".into(), "y".into(), "z".into()],
        Some(h) => (1..=h.k)
            .map(|i| format!("x{i}"))
            .chain((1..=h.k).map(|i| format!("y{i}")))
            .chain(["z".to_string()])
            .collect(),
        None => (1..=g.dim()).map(|i| format!("x{i}")).collect(),
    }
}

fn path_rows(paths: &[PathSample]) -> impl Iterator<Item = Vec<String>> + '_ {
    paths.iter().enumerate().flat_map(|(l, p)| {
        p.states.iter().enumerate().map(move |(i, x)| {
            let mut r = vec![l.to_string(), i.to_string(), num(p.times[i])];
            r.extend(x.iter().map(|&v| num(v)));
            r
        })
    })
}

fn path_header(g: &Geometry) -> Vec<String> {
    let mut h = vec!["path_id".to_string(), "step".into(), "t".into()];
    h.extend(coord_names(g));
    h
}

fn seed(cfg: &KvConfig) -> Result<u64> {
    cfg.parsed_or("seed", 0)
}

fn default_scheme(g: &Geometry) -> Scheme {
    match g {
        Geometry::Heisenberg(_) => Scheme::HeisenbergExact,
        Geometry::Euclidean(_) => Scheme::Euler,
        Geometry::Affine(_) => Scheme::Taylor,
    }
}

pub fn simulate(cfg: &KvConfig, out: &Path) -> Result<()> {
    let x0 = Point::from_vec(cfg.require_list("x0")?);
    let geometry = geometry_from_config(cfg, &x0)?;
    let grid = Grid::new(cfg.parsed_or("T", 1.0)?, positive("n", cfg.parsed_or("n", 100)?)?)
        .map_err(|e| Error::key("T", e.to_string()))?;
    let count = positive("K", cfg.parsed_or("K", 1)?)?;
    let scheme = cfg.parsed_or("scheme", default_scheme(&geometry))?;
    if scheme == Scheme::HeisenbergExact && geometry.as_heisenberg().is_none() {
        return Err(Error::key("scheme", "heisenberg_exact needs the heisenberg geometry"));
    }
    let noise = NoiseSpec {
        k2: positive("K2", cfg.parsed_or("K2", 10)?)?,
        method: cfg.parsed_or("levy_method", LevyMethod::Polynomial)?,
    };
    let seed = seed(cfg)?;
    cfg.finish()?;

    let paths = sample_batch(&geometry, &x0, grid, count, &RngStream::new(seed, 0), scheme, noise)?;
    let mut o = Outputs::new(out)?;
    o.write_csv("paths.csv", &path_header(&geometry), path_rows(&paths))?;
    o.finish("simulate", cfg, seed, json!({ "geometry": geometry.name() }))
}

pub fn train(cfg: &KvConfig, out: &Path) -> Result<()> {
    let tc = TrainingConfig::from_kv(cfg)?;
    cfg.finish()?;
    let init = tc.initial_params()?;
    let total = tc.epochs;
    let (params, report) = train_from(&tc, init, |e, l| log::debug!("epoch {}/{total}: {l}", e + 1))?;

    let mut o = Outputs::new(out)?;
    o.write_json("theta.json", &params.to_json())?;
    o.write_csv(
        "loss.csv",
        &["epoch".to_string(), "loss".into()],
        report.epoch_loss.iter().enumerate().map(|(e, l)| vec![(e + 1).to_string(), num(*l)]),
    )?;
    let trend = report.trend().map(|(a, b)| json!({ "first_fifth_median": a, "last_fifth_median": b }));
    o.finish(
        "train",
        cfg,
        tc.seed,
        json!({
            "geometry": tc.geometry.name(),
            "layer_sizes": tc.layer_sizes(),
            "final_loss": report.epoch_loss.last(),
            "loss_trend": trend,
            "epoch_seconds": report.epoch_seconds,
        }),
    )
}

fn load_theta(cfg: &KvConfig) -> Result<NetworkParams> {
    let path = cfg.require("theta")?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::key("theta", format!("cannot read {path}: {e}")))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::key("theta", e.to_string()))?;
    NetworkParams::from_json(&v).map_err(|e| Error::key("theta", e.to_string()))
}

/// `score = network | analytic-heisenberg | analytic-euclidean` (default network).
fn score_source(cfg: &KvConfig, geometry: &Geometry) -> Result<ScoreSource> {
    let s = match cfg.get("score").unwrap_or("network") {
        "network" => ScoreSource::Network(load_theta(cfg)?),
        "analytic-heisenberg" => ScoreSource::AnalyticHeisenberg {
            vertical_scale: geometry
                .as_heisenberg()
                .map_or(hypobridge::heisenberg::VERTICAL_SCALE, |h| h.vertical_scale),
        },
        "analytic-euclidean" => ScoreSource::AnalyticEuclidean,
        other => {
            return Err(Error::key(
                "score",
                format!("unknown score source {other:?} (network|analytic-heisenberg|analytic-euclidean)"),
            ))
        }
    };
    s.check(geometry).map_err(|e| Error::key("score", e.to_string()))?;
    Ok(s)
}

fn quartiles_json(q: &Quartiles) -> Value {
    json!({ "q25": q.q25, "median": q.q50, "q75": q.q75 })
}

fn quartile_series(q: &Quartiles, times: &[f64]) -> Vec<Series> {
    vec![
        Series {
            xs: times.to_vec(),
            ys: q.q25.clone(),
            color: "#888",
            dashed: true,
        },
        Series {
            xs: times.to_vec(),
            ys: q.q50.clone(),
            color: "#c0392b",
            dashed: false,
        },
        Series {
            xs: times.to_vec(),
            ys: q.q75.clone(),
            color: "#888",
            dashed: true,
        },
    ]
}

fn bridge_svg(ens: &BridgeEnsemble, geometry: &Geometry, t_end: f64) -> String {
    let s = &ens.summary;
    let heis = geometry.as_heisenberg().is_some();
    let mut panels = vec![Panel {
        title: format!("{} (T = {t_end})", if heis { "|(x, y)|" } else { "horizontal norm" }),
        x_label: "t".into(),
        series: quartile_series(&s.horizontal, &s.times),
        arrows: Vec::new(),
    }];
    if let Some(v) = &s.vertical {
        panels.push(Panel {
            title: format!("{} (T = {t_end})", if s.vertical_signed { "z" } else { "vertical norm" }),
            x_label: "t".into(),
            series: quartile_series(v, &s.times),
            arrows: Vec::new(),
        });
    }
    if ens.paths.len() == 1 && geometry.dim() >= 2 {
        let p = &ens.paths[0];
        panels.push(Panel {
            title: "sample path".into(),
            x_label: "first two coordinates".into(),
            series: vec![Series {
                xs: p.states.iter().map(|x| x[0]).collect(),
                ys: p.states.iter().map(|x| x[1]).collect(),
                color: "#1f5fa8",
                dashed: false,
            }],
            arrows: Vec::new(),
        });
    }
    svg::render(&panels)
}

pub fn bridge(cfg: &KvConfig, out: &Path, want_svg: bool) -> Result<()> {
    let x0 = Point::from_vec(cfg.require_list("x0")?);
    let geometry = geometry_from_config(cfg, &x0)?;
    let x_t = Point::from_vec(cfg.require_list("xT")?);
    if x_t.len() != x0.len() {
        return Err(Error::key("xT", format!("expected {} coordinates", x0.len())));
    }
    let horizons = cfg.list("T")?.unwrap_or_else(|| vec![1.0]);
    if horizons.is_empty() || horizons.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::key("T", "horizons must be positive"));
    }
    let n = positive("n", cfg.parsed_or("n", 100)?)?;
    let num_samples = positive("num_samples", cfg.parsed_or("num_samples", 100)?)?;
    let source = score_source(cfg, &geometry)?;
    let seed = seed(cfg)?;
    cfg.finish()?;

    let root = RngStream::new(seed, 0);
    let mut results = Vec::with_capacity(horizons.len());
    for (j, &t_end) in horizons.iter().enumerate() {
        let bc = BridgeConfig {
            x0: x0.clone(),
            x_t: x_t.clone(),
            t_end,
            n,
            num_samples,
            source: source.clone(),
        };
        log::info!("sampling {num_samples} bridges with T = {t_end}");
        results.push(sample_bridge(&geometry, &bc, &root.substream(labels::BRIDGE, j as u64))?);
    }

    let mut o = Outputs::new(out)?;
    let mut midpoint = Vec::new();
    for (&t_end, ens) in horizons.iter().zip(&results) {
        let suffix = if horizons.len() == 1 { String::new() } else { format!("_T{t_end}") };
        o.write_csv(&format!("ensemble{suffix}.csv"), &path_header(&geometry), path_rows(&ens.paths))?;
        let s = &ens.summary;
        let mid = s.times.len() / 2;
        midpoint.push(json!({ "T": t_end, "horizontal_iqr": s.horizontal.iqr(mid) }));
        let config: serde_json::Map<String, Value> = cfg.entries().map(|(k, v)| (k.to_string(), json!(v))).collect();
        let summary = json!({
            "T": t_end,
            "seed": seed,
            "score": source.name(),
            "grid": s.times,
            "horizontal": quartiles_json(&s.horizontal),
            "vertical": s.vertical.as_ref().map(quartiles_json),
            "vertical_signed": s.vertical_signed,
            "config": config,
        });
        o.write_json(&format!("summary{suffix}.json"), &summary)?;
        if want_svg {
            o.write(&format!("summary{suffix}.svg"), bridge_svg(ens, &geometry, t_end).as_bytes())?;
        }
    }
    o.finish("bridge", cfg, seed, json!({ "geometry": geometry.name(), "midpoint": midpoint }))
}

/// `min, max[, count]` with count defaulting to [`GRID_COUNT`].
fn axis(cfg: &KvConfig, key: &str) -> Result<Vec<f64>> {
    let v = cfg.require_list(key)?;
    let (lo, hi, count) = match v.as_slice() {
        [lo, hi] => (*lo, *hi, GRID_COUNT),
        [lo, hi, c] if *c >= 1.0 && c.fract() == 0.0 => (*lo, *hi, *c as usize),
        _ => return Err(Error::key(key, "expected `min, max[, count]` with a positive integer count")),
    };
    if !(lo.is_finite() && hi.is_finite()) || hi < lo {
        return Err(Error::key(key, "need finite min ≤ max"));
    }
    if count == 1 {
        if lo != hi {
            return Err(Error::key(key, "a single grid point needs min = max"));
        }
        return Ok(vec![lo]);
    }
    Ok((0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect())
}

pub fn scoregrid(cfg: &KvConfig, out: &Path, want_svg: bool) -> Result<()> {
    let mut axes = Vec::new();
    while cfg.contains(&format!("axis_{}", axes.len() + 1)) {
        axes.push(axis(cfg, &format!("axis_{}", axes.len() + 1))?);
    }
    if axes.is_empty() {
        return Err(Error::key("axis_1", "missing; give one `axis_i = min, max[, count]` per coordinate"));
    }
    let d = axes.len();
    let x0 = match cfg.list("x0")? {
        Some(v) => Point::from_vec(v),
        None => Point::zeros(d),
    };
    if x0.len() != d {
        return Err(Error::key("x0", format!("expected {d} coordinates to match the axes")));
    }
    let geometry = geometry_from_config(cfg, &x0)?;
    let t: f64 = cfg.required("t")?;
    if !(t > 0.0) {
        return Err(Error::key("t", "must be positive"));
    }
    let source = score_source(cfg, &geometry)?;
    let seed = seed(cfg)?;
    cfg.finish()?;

    let total: usize = axes.iter().map(Vec::len).product();
    let k = geometry.rank();
    let mut rows = Vec::with_capacity(total);
    let mut arrows = Vec::new();
    for idx in 0..total {
        let mut rem = idx;
        let mut x = DVector::zeros(d);
        // last axis varies fastest
        for a in (0..d).rev() {
            x[a] = axes[a][rem % axes[a].len()];
            rem /= axes[a].len();
        }
        let s = source.coefficients(&geometry, &x0, t, &x)?;
        let v = geometry.frame(&x) * &s;
        let mut r: Vec<String> = x.iter().map(|&c| num(c)).collect();
        r.extend(s.iter().map(|&c| num(c)));
        r.extend(v.iter().map(|&c| num(c)));
        rows.push(r);
        if d >= 2 {
            arrows.push(Arrow {
                at: (x[0], x[1]),
                dir: (v[0], v[1]),
            });
        }
    }
    let names = coord_names(&geometry);
    let mut header = names.clone();
    header.extend((1..=k).map(|j| format!("s{j}")));
    header.extend(names.iter().map(|n| format!("v_{n}")));

    let mut o = Outputs::new(out)?;
    o.write_csv("scoregrid.csv", &header, rows)?;
    if want_svg {
        let panel = Panel {
            title: format!("score field at t = {t}"),
            x_label: format!("{} / {}", names[0], names.get(1).map_or("", String::as_str)),
            series: Vec::new(),
            arrows,
        };
        o.write("scoregrid.svg", svg::render(&[panel]).as_bytes())?;
    }
    o.finish(
        "scoregrid",
        cfg,
        seed,
        json!({ "geometry": geometry.name(), "points": total, "score": source.name() }),
    )
}
