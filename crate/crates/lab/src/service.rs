//! HTTP/JSON service over a loaded checkpoint and its grids.
//!
//! Every handler reads one immutable [`Session`] behind an `Arc`; model
//! evaluation runs on the blocking pool. Arrays travel as nested JSON arrays
//! indexed `[time][distance_bin][direction]`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, RawQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use headway_core::grid::{GridSpec, HeadwayGrid};
use headway_core::predict::{predict_recursive, PredictError, TrainedModel};
use headway_core::whatif::{compare_plans, persistence_terminal, PlanError, PlanRules, TerminalPlan};
use headway_core::{Direction, Tensor, N_DIRECTIONS};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;

use crate::checkpoint::{load_checkpoint, Checkpoint};
use crate::formats::read_grids;
use crate::pipeline::{window_at, PreparedData};

pub const SERVICE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Read-only snapshot shared by all request handlers.
#[derive(Debug)]
pub struct Session {
    pub model: TrainedModel,
    pub grid: GridSpec,
    pub rules: PlanRules,
    pub training_digest: String,
    pub best_epoch: usize,
    pub validation_replications: Vec<u32>,
    pub grids_s: BTreeMap<u32, HeadwayGrid>,
    grids_n: BTreeMap<u32, HeadwayGrid>,
}

impl Session {
    pub fn new(ck: Checkpoint, training_digest: String, data: PreparedData, rules: PlanRules) -> anyhow::Result<Self> {
        anyhow::ensure!(
            data.sidecar.scaler.digest() == ck.model.scaler.digest(),
            "grids were preprocessed with a different scaler than the checkpoint"
        );
        anyhow::ensure!(data.sidecar.spec == ck.grid, "grid spec differs from the checkpoint's");
        let mut grids_n = BTreeMap::new();
        for &id in data.grids.keys() {
            grids_n.insert(id, data.normalized(id)?);
        }
        Ok(Session {
            model: ck.model,
            grid: ck.grid,
            rules,
            training_digest,
            best_epoch: ck.history.best_epoch,
            validation_replications: ck.validation_replications,
            grids_s: data.grids,
            grids_n,
        })
    }

    pub fn load(checkpoint: &Path, data_dir: &Path, rules: PlanRules) -> anyhow::Result<Self> {
        let (header, ck) = load_checkpoint(checkpoint)?;
        let (sidecar, grids) = read_grids(data_dir)?;
        Session::new(ck, header.payload_sha256, PreparedData { sidecar, grids }, rules)
    }
}

/// Error body: `{"error": message, "offending": [[index, value], ...]?}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub offending: Option<Vec<(usize, f64)>>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), offending: None }
    }
    fn bad_request(m: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, m)
    }
    fn unprocessable(m: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, m)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(o) = self.offending {
            body["offending"] = json!(o);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<PlanError> for ApiError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::BelowMinimum { ref entries, .. } => {
                let offending = Some(entries.clone());
                ApiError { offending, ..ApiError::unprocessable(e.to_string()) }
            }
            PlanError::Predict(p) => p.into(),
            other => ApiError::unprocessable(other.to_string()),
        }
    }
}

impl From<PredictError> for ApiError {
    fn from(e: PredictError) -> Self {
        match e {
            PredictError::Model(_) | PredictError::ScalerMismatch { .. } => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
            }
            other => ApiError::unprocessable(other.to_string()),
        }
    }
}

type Nested<T> = Vec<Vec<[T; N_DIRECTIONS]>>;

/// `[bins x N_d x N_dir x 1]` tensor as `[bins][N_d][N_dir]`.
pub fn nested(t: &Tensor<f32>) -> Nested<f32> {
    let s = t.shape();
    (0..s[0])
        .map(|i| (0..s[1]).map(|j| [t.get(&[i, j, 0, 0]), t.get(&[i, j, 1, 0])]).collect())
        .collect()
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    /// Look-back window in seconds, `[L][N_d][N_dir]`.
    pub window: Option<Nested<f64>>,
    pub replication: Option<u32>,
    pub anchor: Option<usize>,
    #[serde(default)]
    pub terminal_plans: Vec<TerminalPlan>,
    #[serde(default = "one")]
    pub rounds: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatifRequest {
    pub window: Option<Nested<f64>>,
    pub replication: Option<u32>,
    pub anchor: Option<usize>,
    pub plans: Vec<TerminalPlan>,
    #[serde(default)]
    pub baseline_index: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictResponse {
    pub replication: Option<u32>,
    pub anchor_time_bin: usize,
    pub horizon_minutes: u32,
    pub rounds: usize,
    pub headways_s: Nested<f32>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WhatifOutcome {
    pub plan: TerminalPlan,
    pub headways_s: Nested<f32>,
    pub cv: Vec<[f64; N_DIRECTIONS]>,
    pub mean_s: Vec<[f64; N_DIRECTIONS]>,
    pub cv_delta: Vec<[f64; N_DIRECTIONS]>,
    pub mean_delta_s: Vec<[f64; N_DIRECTIONS]>,
    pub line_cv: [f64; N_DIRECTIONS],
}

#[derive(Debug, Clone, Serialize)]
pub struct WhatifResponse {
    pub replication: Option<u32>,
    pub anchor_time_bin: usize,
    pub baseline_index: usize,
    pub outcomes: Vec<WhatifOutcome>,
}

/// Normalized window plus the terminal series used where no plan applies.
struct Source {
    replication: Option<u32>,
    anchor: usize,
    x: Tensor<f32>,
    terminal: Tensor<f32>,
}

impl Session {
    fn source(
        &self,
        window: Option<&Nested<f64>>,
        replication: Option<u32>,
        anchor: Option<usize>,
        bins: usize,
    ) -> Result<Source, ApiError> {
        let m = &self.model;
        match (window, replication, anchor) {
            (Some(w), None, _) => {
                let (l, n_d) = (m.lookback(), m.n_distance_bins());
                if w.len() != l || w.iter().any(|row| row.len() != n_d) {
                    return Err(ApiError::unprocessable(format!("window must be [{l}][{n_d}][{N_DIRECTIONS}]")));
                }
                let mut data = Vec::with_capacity(l * n_d * N_DIRECTIONS);
                for (t, row) in w.iter().enumerate() {
                    for (j, cell) in row.iter().enumerate() {
                        for &v in cell {
                            if !(v.is_finite() && v > 0.0) {
                                return Err(ApiError::unprocessable(format!(
                                    "window[{t}][{j}] holds {v}; headways must be finite and positive"
                                )));
                            }
                            data.push(m.scaler.normalize_value(v) as f32);
                        }
                    }
                }
                let x = Tensor::from_vec(&[l, n_d, N_DIRECTIONS, 1], data).expect("window shape");
                let terminal = persistence_terminal(m, &x, bins)?;
                Ok(Source { replication: None, anchor: anchor.unwrap_or(l), x, terminal })
            }
            (None, Some(id), Some(anchor)) => {
                let g = self
                    .grids_n
                    .get(&id)
                    .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown replication {id}")))?;
                let w = window_at(g, &m.window, anchor, bins).map_err(|e| ApiError::unprocessable(e.to_string()))?;
                let terminal = match w.terminal {
                    Some(t) => t,
                    None => persistence_terminal(m, &w.x, bins)?,
                };
                Ok(Source { replication: Some(id), anchor, x: w.x, terminal })
            }
            _ => Err(ApiError::bad_request("give either `window`, or `replication` and `anchor`")),
        }
    }

    pub fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, ApiError> {
        if req.rounds == 0 {
            return Err(ApiError::unprocessable("rounds must be at least 1"));
        }
        let m = &self.model;
        let bins = req.rounds * m.horizon();
        let mut src = self.source(req.window.as_ref(), req.replication, req.anchor, bins)?;
        let mut seen = [false; N_DIRECTIONS];
        for p in &req.terminal_plans {
            self.rules.validate(p)?;
            let k = p.direction.index();
            if std::mem::replace(&mut seen[k], true) {
                return Err(ApiError::unprocessable(format!("two terminal plans for {}", p.direction)));
            }
            if p.headways_s.len() < bins {
                return Err(ApiError::unprocessable(format!(
                    "plan '{}' covers {} bins, {bins} needed",
                    p.label,
                    p.headways_s.len()
                )));
            }
            for (s, &h) in p.headways_s.iter().take(bins).enumerate() {
                src.terminal.set(&[s, k, 0], m.scaler.normalize_value(h) as f32);
            }
        }
        let pred = predict_recursive(m, &m.scaler, &src.x, &src.terminal, req.rounds, src.anchor)?;
        Ok(PredictResponse {
            replication: src.replication,
            anchor_time_bin: src.anchor,
            horizon_minutes: pred.horizon_minutes,
            rounds: req.rounds,
            headways_s: nested(&pred.y_hat),
        })
    }

    pub fn whatif(&self, req: &WhatifRequest) -> Result<WhatifResponse, ApiError> {
        let bins = req.plans.first().map(|p| p.headways_s.len()).ok_or_else(|| ApiError::unprocessable("no plans"))?;
        let m = &self.model;
        if bins == 0 || bins % m.horizon() != 0 {
            return Err(PlanError::Length { len: bins, horizon: m.horizon() }.into());
        }
        let src = self.source(req.window.as_ref(), req.replication, req.anchor, bins)?;
        let report = compare_plans(m, &m.scaler, &self.rules, &src.x, &src.terminal, &req.plans, req.baseline_index)?;
        Ok(WhatifResponse {
            replication: src.replication,
            anchor_time_bin: src.anchor,
            baseline_index: report.baseline_index,
            outcomes: report
                .outcomes
                .into_iter()
                .map(|o| WhatifOutcome {
                    headways_s: nested(&o.prediction_s),
                    plan: o.plan,
                    cv: o.cv,
                    mean_s: o.mean_s,
                    cv_delta: o.cv_delta,
                    mean_delta_s: o.mean_delta_s,
                    line_cv: o.line_cv,
                })
                .collect(),
        })
    }

    pub fn window(&self, id: u32, anchor: usize) -> Result<Value, ApiError> {
        let g = self
            .grids_s
            .get(&id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown replication {id}")))?;
        let l = self.model.lookback();
        let n_t = g.n_time_bins();
        if anchor < l || anchor > n_t {
            return Err(ApiError::unprocessable(format!("anchor {anchor} outside {l}..={n_t}")));
        }
        let n_d = g.spec.n_distance_bins;
        let rows = |f: &dyn Fn(usize, usize, usize) -> Value| -> Vec<Vec<Value>> {
            (anchor - l..anchor)
                .map(|t| (0..n_d).map(|j| json!([f(t, j, 0), f(t, j, 1)])).collect())
                .collect()
        };
        Ok(json!({
            "replication": id,
            "anchor": anchor,
            "lookback": l,
            "first_time_bin": anchor - l,
            "n_time_bins": n_t,
            "headways_s": rows(&|t, j, k| json!(g.get(t, j, k))),
            "observed": rows(&|t, j, k| json!(g.is_observed(t, j, k))),
        }))
    }
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok", "version": SERVICE_VERSION }))
}

async fn model_info(State(s): State<Arc<Session>>) -> Json<Value> {
    let m = &s.model;
    Json(json!({
        "version": SERVICE_VERSION,
        "dims": m.params.dims,
        "scaler": m.scaler,
        "window": m.window,
        "grid": s.grid,
        "delta_t_s": m.delta_t_s,
        "lookback": m.lookback(),
        "horizon": m.horizon(),
        "min_headway_s": s.rules.min_headway_s,
        "directions": Direction::ALL,
        "training_digest": s.training_digest,
        "best_epoch": s.best_epoch,
    }))
}

async fn replications(State(s): State<Arc<Session>>) -> Json<Value> {
    let list: Vec<Value> = s
        .grids_s
        .iter()
        .map(|(id, g)| {
            json!({
                "id": id,
                "n_time_bins": g.n_time_bins(),
                "validation": s.validation_replications.binary_search(id).is_ok(),
            })
        })
        .collect();
    Json(json!({ "replications": list }))
}

async fn window(
    State(s): State<Arc<Session>>,
    UrlPath(id): UrlPath<String>,
    RawQuery(query): RawQuery,
) -> Result<Json<Value>, ApiError> {
    let id: u32 = id.parse().map_err(|_| ApiError::new(StatusCode::NOT_FOUND, format!("unknown replication {id}")))?;
    let anchor = query
        .as_deref()
        .unwrap_or("")
        .split('&')
        .find_map(|kv| kv.strip_prefix("anchor="))
        .ok_or_else(|| ApiError::bad_request("missing query parameter `anchor`"))?;
    let anchor: usize = anchor.parse().map_err(|_| ApiError::bad_request(format!("anchor `{anchor}` is not an integer")))?;
    s.window(id, anchor).map(Json)
}

async fn blocking<T, F>(s: Arc<Session>, f: F) -> Result<Json<T>, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Session) -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&s))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
        .map(Json)
}

async fn predict(State(s): State<Arc<Session>>, body: Bytes) -> Result<Json<PredictResponse>, ApiError> {
    let req: PredictRequest = parse_body(&body)?;
    blocking(s, move |s| s.predict(&req)).await
}

async fn whatif(State(s): State<Arc<Session>>, body: Bytes) -> Result<Json<WhatifResponse>, ApiError> {
    let req: WhatifRequest = parse_body(&body)?;
    blocking(s, move |s| s.whatif(&req)).await
}

pub fn router(session: Arc<Session>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model", get(model_info))
        .route("/replications", get(replications))
        .route("/replications/{id}/window", get(window))
        .route("/predict", post(predict))
        .route("/whatif", post(whatif))
        .layer(CorsLayer::permissive())
        .with_state(session)
}

/// Blocks serving `session` on `0.0.0.0:port`.
pub fn serve(session: Session, port: u16) -> anyhow::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
        log::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(Arc::new(session))).await?;
        Ok(())
    })
}
