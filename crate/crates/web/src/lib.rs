//! WebAssembly entry points for the demo page in `www/`.
//!
//! Every export returns a JSON string (or an error message), so the page
//! needs nothing beyond `JSON.parse`.

use ranklab::bounds::{bound_grid, gaussian_scores, item_at_rank, log_spaced, mc_verify, sce_bound, BoundQuery};
use ranklab::losses::{bce_loss, bpr_loss, ce_eta_loss, ce_loss, sce_loss, ssm_loss};
use ranklab::metrics::{mrr, ndcg, rank_of_target, Metric};
use serde_json::json;
use wasm_bindgen::prelude::wasm_bindgen;

type JsonResult = Result<String, String>;

fn err(e: ranklab::Error) -> String {
    e.to_string()
}

/// Bound grid over ranks and K in the 1-2-5 series up to 1000.
#[wasm_bindgen]
pub fn bound_heatmap(catalog_size: usize, alpha: f64, metric: &str) -> JsonResult {
    let metric: Metric = metric.parse().map_err(err)?;
    let axis: Vec<usize> = log_spaced(1000).into_iter().filter(|&r| r <= catalog_size).collect();
    let grid = bound_grid(catalog_size, alpha, &axis, &axis, metric).map_err(err)?;
    serde_json::to_string(&grid).map_err(|e| e.to_string())
}

/// Monte Carlo frequency against the bound for a target at rank `r_plus`
/// in a Gaussian score vector.
#[wasm_bindgen]
pub fn mc_check(catalog_size: usize, r_plus: usize, k: usize, alpha: f64, trials: u32, seed: u32) -> JsonResult {
    if trials == 0 || trials > 200_000 {
        return Err("trials must be in 1..=200000".into());
    }
    let q = BoundQuery::new(r_plus, k, catalog_size, alpha).map_err(err)?;
    let scores = gaussian_scores(catalog_size, u64::from(seed));
    let target = item_at_rank(&scores, r_plus).map_err(err)?;
    let mc = mc_verify(&scores, target, k, alpha, u64::from(trials), u64::from(seed)).map_err(err)?;
    let ndcg_bound = sce_bound(&q, Metric::Ndcg).map_err(err)?;
    let mrr_bound = sce_bound(&q, Metric::Mrr).map_err(err)?;
    Ok(json!({
        "r_plus": mc.r_plus,
        "trials": mc.trials,
        "ndcg": { "bound": ndcg_bound.probability, "raw": ndcg_bound.raw, "frequency": mc.ndcg_frequency },
        "mrr": { "bound": mrr_bound.probability, "raw": mrr_bound.raw, "frequency": mc.mrr_frequency },
        "floor_violations": mc.floor_violations,
    })
    .to_string())
}

/// Every loss for one positive score against a list of negatives that
/// also plays the rest of the catalog, plus SCE as a function of α.
#[wasm_bindgen]
pub fn loss_explorer(s_plus: f64, negatives: &[f64], alpha: f64, eta: f64) -> JsonResult {
    if negatives.is_empty() {
        return Err("need at least one negative score".into());
    }
    if !s_plus.is_finite() || negatives.iter().any(|v| !v.is_finite()) {
        return Err("scores must be finite".into());
    }
    let mut catalog = vec![s_plus];
    catalog.extend_from_slice(negatives);
    let r = rank_of_target(&catalog, 0).map_err(err)?;
    let alphas: Vec<f64> = (0..=40).map(|i| 10f64.powf(f64::from(i) / 10.0)).collect();
    let curve = alphas
        .iter()
        .map(|&a| sce_loss(s_plus, negatives, a).map(|l| l.value))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let xi = negatives.iter().filter(|&&v| v >= s_plus).count() as f64;
    Ok(json!({
        "rank": r.get(),
        "neg_log_ndcg": -ndcg(r).ln(),
        "neg_log_mrr": -mrr(r).ln(),
        "losses": {
            "ce": ce_loss(&catalog, 0).map_err(err)?.value,
            "ce_eta": ce_eta_loss(&catalog, 0, eta).map_err(err)?.value,
            "bce": bce_loss(s_plus, negatives[0]).value,
            "bpr": bpr_loss(s_plus, negatives[0]).value,
            "ssm": ssm_loss(s_plus, negatives).map_err(err)?.value,
            "sce": sce_loss(s_plus, negatives, alpha).map_err(err)?.value,
        },
        "sce_floor": (alpha * xi).ln_1p(),
        "alphas": alphas,
        "sce_curve": curve,
    })
    .to_string())
}
