//! Browser demo over the core library. Each exported function takes plain
//! numbers and strings and returns a JSON document; failures come back as
//! `{"error": "..."}` so the page never has to catch exceptions.
//!
//! Build with `wasm-pack build crates/web-demo --target web --out-dir www/pkg`
//! and serve `crates/web-demo/www/` as static files.

use serde::Serialize;
use ssd_autotune::clustering::ClusterModel;
use ssd_autotune::paramspace::names::*;
use ssd_autotune::paramspace::{Configuration, Constraints, FlashType, Interface, ParamDef, ParamKind, ParamSpace};
use ssd_autotune::simssd::simulate;
use ssd_autotune::trace::{generate_synthetic_trace, Profile};
use ssd_autotune::tuner::{tune, workload_features, FnEvaluator, SearchSpace, TunerSettings};
use wasm_bindgen::prelude::*;

const WARMUP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Run {
    pub latency_us: f64,
    pub throughput_mbps: f64,
    pub gc_invocations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationView {
    pub profile: String,
    pub channels: f64,
    pub data_cache_bytes: f64,
    /// Capacity-coupled parameters after rebalancing to the capacity band.
    pub geometry: Vec<(String, String)>,
    pub reference: Run,
    pub configured: Run,
}

/// Simulates the reference drive and a variant with the chosen channel
/// count and data-cache level. Other geometry parameters shift to keep the
/// variant at 512 GiB.
pub fn simulation(
    profile: &str,
    records: usize,
    channel_level: usize,
    cache_level: usize,
    seed: u64,
) -> Result<SimulationView, String> {
    let profile: Profile = profile.parse()?;
    if !(100..=50_000).contains(&records) {
        return Err("records must be between 100 and 50000".into());
    }
    let space = ParamSpace::default_catalog();
    let cons = Constraints::new(512 << 30, Interface::Nvme, FlashType::Mlc).map_err(|e| e.to_string())?;
    let levels = |n: &str| space.param(n).map_or(0, |p| p.kind.levels());
    if channel_level >= levels(FLASH_CHANNEL_COUNT) || cache_level >= levels(DATA_CACHE_CAPACITY) {
        return Err("level out of range".into());
    }
    let reference = space.reference_config();
    let wanted = reference
        .with(FLASH_CHANNEL_COUNT, channel_level)
        .with(DATA_CACHE_CAPACITY, cache_level);
    let config = space
        .nearest_feasible_where(&wanted, &cons, |n| n != FLASH_CHANNEL_COUNT)
        .ok_or("no geometry reaches 512 GiB with that channel count")?;

    let trace = generate_synthetic_trace(profile, records, seed);
    let run = |c: &Configuration| {
        simulate(&space, c, &cons, &trace, WARMUP)
            .map(|r| Run {
                latency_us: r.mean_latency_us,
                throughput_mbps: r.throughput_mbps,
                gc_invocations: r.gc_invocations,
            })
            .map_err(|e| e.to_string())
    };
    Ok(SimulationView {
        profile: profile.name(),
        channels: space.value(&config, FLASH_CHANNEL_COUNT).unwrap_or(0.0),
        data_cache_bytes: space.value(&config, DATA_CACHE_CAPACITY).unwrap_or(0.0),
        geometry: space
            .params()
            .iter()
            .filter(|p| p.capacity_coupled)
            .map(|p| (p.name.clone(), space.display_value(&config, &p.name)))
            .collect(),
        reference: run(&reference)?,
        configured: run(&config)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub profile: String,
    pub cluster: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scatter {
    pub points: Vec<ScatterPoint>,
    pub centers: Vec<(String, [f64; 2], f64)>,
    /// Fraction of windows whose cluster carries their own profile's label.
    pub agreement: f64,
}

/// Windows of the five standard profiles projected onto the two principal
/// components, with the fitted clusters.
pub fn scatter(windows_per_profile: usize, seed: u64) -> Result<Scatter, String> {
    if !(2..=40).contains(&windows_per_profile) {
        return Err("windows per profile must be between 2 and 40".into());
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, p) in Profile::STANDARD.iter().enumerate() {
        let trace = generate_synthetic_trace(*p, windows_per_profile * 3000, seed.wrapping_add(i as u64));
        for f in workload_features(&trace).map_err(|e| e.to_string())? {
            features.push(f);
            labels.push(p.name());
        }
    }
    let model = ClusterModel::fit(&features, Some(&labels), seed).map_err(|e| e.to_string())?;
    let mut points = Vec::with_capacity(features.len());
    let mut agree = 0;
    for (f, label) in features.iter().zip(&labels) {
        let [x, y] = model.pca.project(f).map_err(|e| e.to_string())?;
        let nearest = model
            .clusters
            .iter()
            .min_by(|a, b| {
                let d = |c: &[f64; 2]| (c[0] - x).hypot(c[1] - y);
                d(&a.center).total_cmp(&d(&b.center))
            })
            .ok_or("no clusters")?;
        if nearest.majority_label.as_deref() == Some(label) {
            agree += 1;
        }
        points.push(ScatterPoint {
            x,
            y,
            profile: label.clone(),
            cluster: nearest.cluster_id.clone(),
        });
    }
    Ok(Scatter {
        centers: model
            .clusters
            .iter()
            .map(|c| (c.cluster_id.clone(), c.center, c.mean_intra_distance))
            .collect(),
        agreement: agree as f64 / points.len() as f64,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyStep {
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub grade: f64,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyRun {
    /// grade[a][b] at the optimal c, for the heat map.
    pub landscape: Vec<Vec<f64>>,
    pub optimum: f64,
    pub steps: Vec<ToyStep>,
    pub converged: bool,
}

fn toy_space() -> ParamSpace {
    let axis = |name: &str, n: usize| ParamDef {
        name: name.into(),
        kind: ParamKind::Discrete {
            values: (0..n).map(|i| i as f64).collect(),
        },
        capacity_coupled: false,
        unit: String::new(),
    };
    ParamSpace::new(vec![axis("a", 8), axis("b", 6), axis("c", 4)]).expect("valid toy catalog")
}

/// Bowl with a tilted valley and a shallow decoy near (1, 4).
fn toy_grade(a: f64, b: f64, c: f64) -> f64 {
    let bowl = 0.08 * (a - 5.0).powi(2) + 0.15 * (b - 2.0).powi(2) + 0.3 * (c - 1.0).powi(2);
    let dip = -0.4 * (-((a - 1.0).powi(2) + (b - 4.0).powi(2))).exp();
    1.0 + bowl + 0.05 * (a - 5.0) * (b - 2.0) + dip
}

/// Runs the GP-guided search on a 192-point toy landscape from the corner.
pub fn toy_search(seed: u64, max_iterations: usize) -> Result<ToyRun, String> {
    let space = toy_space();
    let cons = Constraints::with_tolerance(1, Interface::Nvme, FlashType::Mlc, 0.5).map_err(|e| e.to_string())?;
    let coords = |c: &Configuration| (c.get("a").unwrap_or(0), c.get("b").unwrap_or(0), c.get("c").unwrap_or(0));
    let eval = FnEvaluator(|c: &Configuration| {
        let (a, b, z) = coords(c);
        toy_grade(a as f64, b as f64, z as f64)
    });
    let settings = TunerSettings {
        rng_seed: seed,
        max_outer_iterations: max_iterations.clamp(1, 100),
        min_outer_iterations: 5,
        ..TunerSettings::default()
    };
    let out = tune(&SearchSpace::all(&space, cons), &eval, &[space.lowest_config()], &settings)
        .map_err(|e| e.to_string())?;

    let mut best = f64::INFINITY;
    let steps = out
        .history
        .iter()
        .map(|r| {
            best = best.min(r.grade);
            let (a, b, c) = coords(&r.config);
            ToyStep { a, b, c, grade: r.grade, best }
        })
        .collect();
    let landscape: Vec<Vec<f64>> = (0..8)
        .map(|a| {
            (0..6)
                .map(|b| (0..4).map(|c| toy_grade(a as f64, b as f64, c as f64)).fold(f64::INFINITY, f64::min))
                .collect()
        })
        .collect();
    let optimum = landscape.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    Ok(ToyRun {
        landscape,
        optimum,
        steps,
        converged: out.converged,
    })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

#[wasm_bindgen(js_name = simulate)]
pub fn simulate_json(profile: &str, records: usize, channel_level: usize, cache_level: usize, seed: u64) -> String {
    to_json(simulation(profile, records, channel_level, cache_level, seed))
}

#[wasm_bindgen(js_name = clusterScatter)]
pub fn scatter_json(windows_per_profile: usize, seed: u64) -> String {
    to_json(scatter(windows_per_profile, seed))
}

#[wasm_bindgen(js_name = toySearch)]
pub fn toy_search_json(seed: u64, max_iterations: usize) -> String {
    to_json(toy_search(seed, max_iterations))
}

/// Option lists for the page's selectors.
#[wasm_bindgen(js_name = catalogLevels)]
pub fn catalog_levels() -> String {
    let space = ParamSpace::default_catalog();
    let r = space.reference_config();
    let levels = |name: &str| {
        let p = space.param(name).expect("built-in parameter");
        let shown: Vec<String> = (0..p.kind.levels())
            .map(|i| space.display_value(&r.with(name, i), name))
            .collect();
        serde_json::json!({ "labels": shown, "reference": r.get(name) })
    };
    serde_json::json!({
        "channels": levels(FLASH_CHANNEL_COUNT),
        "dataCache": levels(DATA_CACHE_CAPACITY),
    })
    .to_string()
}
