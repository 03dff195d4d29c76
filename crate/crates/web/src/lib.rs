//! Browser demo: solve the coefficient problem on raw synthetic pixels,
//! corrupt one modality and compare fused and shared coefficients, and probe
//! the affinity perturbation bounds. Every entry point returns a JSON string.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use drogsure::admm::{admm_run, AdmmConfig};
use drogsure::clustering::{build_affinity, fuse_coefficients, spectral_cluster, MetricSet};
use drogsure::dataio::{gen_synthetic, ModalityDataset, SyntheticSpec};
use drogsure::numerics::DenseMatrix;
use drogsure::robustness::{corrupt, mean_square_perturbation, normalize_max, perturbation_report, Corruption};

/// Samples per cluster in the demo dataset; the learning split keeps 75%.
const PER_CLUSTER: usize = 20;
const MAX_ITERS: usize = 200;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn demo_data(seed: u64, sigma: f64) -> Result<ModalityDataset, String> {
    let mut spec = SyntheticSpec::fixture(seed);
    spec.per_cluster = PER_CLUSTER;
    spec.sigma = sigma;
    Ok(gen_synthetic(&spec).map_err(err)?.learning)
}

fn pixels(ds: &ModalityDataset) -> Vec<DenseMatrix> {
    ds.modalities
        .iter()
        .map(|m| DenseMatrix::from_row_slice(m.batch, m.sample_len(), &m.data))
        .collect()
}

fn concat(feats: &[DenseMatrix]) -> DenseMatrix {
    let n = feats[0].nrows();
    let width = feats.iter().map(|f| f.ncols()).sum();
    let mut out = DenseMatrix::zeros(n, width);
    let mut off = 0;
    for f in feats {
        out.columns_mut(off, f.ncols()).copy_from(f);
        off += f.ncols();
    }
    out
}

struct Solved {
    affinity: DenseMatrix,
    labels: Vec<usize>,
    metrics: MetricSet,
    iterations: usize,
    residuals: Vec<f64>,
}

fn solve(feats: &[DenseMatrix], truth: &[usize], lambda_comm: f64, seed: u64) -> Result<Solved, String> {
    let cfg = AdmmConfig {
        lambda_comm,
        max_iters: MAX_ITERS,
        ..AdmmConfig::default()
    };
    let report = admm_run(feats, cfg).map_err(err)?;
    let affinity = build_affinity(&fuse_coefficients(&report.state.omega).map_err(err)?).map_err(err)?;
    let p = truth.iter().max().map_or(1, |m| m + 1);
    let labels = spectral_cluster(&affinity, p, seed).map_err(err)?;
    let metrics = MetricSet::score(&labels, truth).map_err(err)?;
    Ok(Solved {
        affinity,
        labels,
        metrics,
        iterations: report.iterations,
        residuals: report.residuals.iter().map(|r| r.iter().sum()).collect(),
    })
}

fn flat(m: &DenseMatrix) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Clusters a freshly generated dataset from its raw pixels.
pub fn cluster_json(seed: u64, sigma: f64, lambda_comm: f64) -> Result<Value, String> {
    let ds = demo_data(seed, sigma)?;
    let truth = ds.labels.clone().expect("synthetic data is labelled");
    let s = solve(&pixels(&ds), &truth, lambda_comm, seed)?;
    let shown = normalize_max(&s.affinity).map_err(err)?;
    Ok(json!({
        "n": truth.len(),
        "metrics": s.metrics,
        "iterations": s.iterations,
        "residuals": s.residuals,
        "labels": s.labels,
        "truth": truth,
        "affinity": flat(&shown),
    }))
}

/// Corrupts `target` and compares per-modality coefficients fused after
/// solving with one coefficient matrix over the concatenated pixels.
pub fn corruption_json(seed: u64, kind: &str, snr_db: f64, target: usize) -> Result<Value, String> {
    let ds = demo_data(seed, 0.01)?;
    let truth = ds.labels.clone().expect("synthetic data is labelled");
    let corruption = match kind {
        "shuffle" => Corruption::Shuffle,
        "gaussian" => Corruption::GaussianSnr { snr_db },
        other => return Err(format!("unknown corruption {other:?}")),
    };
    if target >= ds.modality_count() {
        return Err(format!("target modality {target} out of range 0..{}", ds.modality_count()));
    }
    let bad = corrupt(&ds, corruption, &[target], seed).map_err(err)?;
    let (clean_px, bad_px) = (pixels(&ds), pixels(&bad));
    let mut rows = Vec::new();
    for (name, clean_f, bad_f) in [
        ("fused", clean_px.clone(), bad_px.clone()),
        ("shared", vec![concat(&clean_px)], vec![concat(&bad_px)]),
    ] {
        let c = solve(&clean_f, &truth, 1.0, seed)?;
        let k = solve(&bad_f, &truth, 1.0, seed)?;
        let (cn, kn) = (normalize_max(&c.affinity).map_err(err)?, normalize_max(&k.affinity).map_err(err)?);
        let p = truth.iter().max().map_or(1, |m| m + 1);
        rows.push(json!({
            "method": name,
            "clean": c.metrics,
            "corrupted": k.metrics,
            "acc_drop": c.metrics.acc - k.metrics.acc,
            "mean_sq_perturbation": mean_square_perturbation(&c.affinity, &k.affinity).map_err(err)?,
            "bounds": perturbation_report(&cn, &kn, p).map_err(err)?,
            "affinity": flat(&kn),
        }));
    }
    Ok(json!({ "n": truth.len(), "results": rows }))
}

/// A planted block affinity with a random symmetric perturbation of the
/// given relative scale.
pub fn bounds_json(seed: u64, clusters: usize, per_cluster: usize, scale: f64) -> Result<Value, String> {
    if clusters < 2 || per_cluster < 2 {
        return Err("need at least 2 clusters of 2 samples".into());
    }
    if !(scale.is_finite() && scale >= 0.0) {
        return Err(format!("scale must be nonnegative, got {scale}"));
    }
    let n = clusters * per_cluster;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DenseMatrix::zeros(n, n);
    let mut b = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = if i / per_cluster == j / per_cluster { rng.random_range(0.6..1.0) } else { 0.0 };
            let d = scale * rng.random_range(-1.0..1.0);
            a[(i, j)] = v;
            a[(j, i)] = v;
            b[(i, j)] = v + d;
            b[(j, i)] = v + d;
        }
    }
    let report = perturbation_report(&a, &b, clusters).map_err(err)?;
    Ok(json!({ "n": n, "report": report, "clean": flat(&a), "perturbed": flat(&b) }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn cluster(seed: u32, sigma: f64, lambda_comm: f64) -> Result<String, JsValue> {
    to_js(cluster_json(seed.into(), sigma, lambda_comm))
}

#[wasm_bindgen]
pub fn corruption(seed: u32, kind: &str, snr_db: f64, target: usize) -> Result<String, JsValue> {
    to_js(corruption_json(seed.into(), kind, snr_db, target))
}

#[wasm_bindgen]
pub fn bounds(seed: u32, clusters: usize, per_cluster: usize, scale: f64) -> Result<String, JsValue> {
    to_js(bounds_json(seed.into(), clusters, per_cluster, scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_pixels_cluster_well() {
        let v = cluster_json(0, 0.01, 1.0).unwrap();
        assert_eq!(v["n"], 60);
        assert!(v["metrics"]["acc"].as_f64().unwrap() >= 0.9, "{}", v["metrics"]);
        assert_eq!(v["affinity"].as_array().unwrap().len(), 3600);
    }

    #[test]
    fn corruption_reports_both_methods() {
        let v = corruption_json(1, "shuffle", 0.0, 0).unwrap();
        let rows = v["results"].as_array().unwrap();
        assert_eq!(rows.len(), 2);
        for r in rows {
            assert!(r["mean_sq_perturbation"].as_f64().unwrap() >= 0.0);
            assert_eq!(r["bounds"]["n_eps_holds"], true);
        }
        assert!(corruption_json(1, "blur", 0.0, 0).is_err());
        assert!(corruption_json(1, "shuffle", 0.0, 7).is_err());
    }

    #[test]
    fn small_perturbations_satisfy_the_bounds() {
        let v = bounds_json(3, 3, 5, 0.01).unwrap();
        assert_eq!(v["report"]["bound_holds"], true);
        assert_eq!(v["report"]["n_eps_holds"], true);
        assert!(bounds_json(3, 1, 5, 0.01).is_err());
    }
}
