//! HTTP API for the global tag store and portal curation, versioned under
//! `/api/v1`. Bodies are JSON except the `.ttl` exports (Turtle, UTF-8).
//! Errors are `{"error": kind, "message": text}` with status 404 (unknown
//! slug or portal), 409 (conflict), 410 (stale suggestion) or 422
//! (validation).

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use tagbridge_core::clock::Clock;
use tagbridge_core::corpus::Corpus;
use tagbridge_core::reconcile::{MergeError, SuggestionId, Tier, Workspace};
use tagbridge_core::semsim::SimilarityProvider;
use tagbridge_core::tagserver::{
    export_turtle, GlobalTag, LocalLink, RdfContext, RelationKind, Slug, TagError, TagStore,
};

/// Shared state behind every handler.
pub struct AppState {
    pub store: Arc<TagStore>,
    pub workspace: Workspace,
    pub provider: Option<Arc<dyn SimilarityProvider>>,
    pub threshold: f64,
    pub clock: Arc<dyn Clock>,
    /// Global tag IRIs are minted under this base.
    pub server_base: String,
    // Merges rewrite snapshot files; one at a time.
    merge_lock: Mutex<()>,
}

impl AppState {
    pub fn new(
        store: Arc<TagStore>,
        workspace: Workspace,
        provider: Option<Arc<dyn SimilarityProvider>>,
        threshold: f64,
        clock: Arc<dyn Clock>,
        server_base: impl Into<String>,
    ) -> Self {
        Self {
            store,
            workspace,
            provider,
            threshold,
            clock,
            server_base: server_base.into(),
            merge_lock: Mutex::new(()),
        }
    }

    fn provider(&self) -> Option<&dyn SimilarityProvider> {
        self.provider.as_deref()
    }

    // Portal base URLs are read fresh so that newly harvested portals show
    // up without a restart.
    fn rdf_context(&self) -> RdfContext {
        let bases = Corpus::load_dir(self.workspace.dir())
            .map(|c| c.base_urls())
            .unwrap_or_default();
        RdfContext::new(&self.server_base, bases)
    }
}

pub type Shared = Arc<AppState>;

/// An error rendered as JSON with its HTTP status.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.kind, "message": self.message}))).into_response()
    }
}

impl From<TagError> for ApiError {
    fn from(e: TagError) -> Self {
        let msg = e.to_string();
        match e {
            TagError::NotFound(_) => Self::not_found(msg),
            TagError::Conflict(_) => Self::new(StatusCode::CONFLICT, "conflict", msg),
            TagError::Validation(_) => Self::invalid(msg),
            TagError::Io { .. } | TagError::Corrupt { .. } => Self::internal(msg),
        }
    }
}

impl From<MergeError> for ApiError {
    fn from(e: MergeError) -> Self {
        let msg = e.to_string();
        match e {
            MergeError::Stale(_) => Self::new(StatusCode::GONE, "stale", msg),
            MergeError::UnknownPortal(_) | MergeError::UnknownSuggestion(_) => Self::not_found(msg),
            MergeError::NotPending(_) => Self::new(StatusCode::CONFLICT, "conflict", msg),
            MergeError::BadSurvivor { .. } => Self::invalid(msg),
            _ => Self::internal(msg),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

fn parse_slug(raw: &str) -> ApiResult<Slug> {
    Slug::try_from(raw).map_err(|_| ApiError::not_found(format!("global tag {raw:?}")))
}

fn turtle(body: String) -> Response {
    ([(header::CONTENT_TYPE, "text/turtle; charset=utf-8")], body).into_response()
}

#[derive(Deserialize)]
struct SearchQuery {
    #[serde(default)]
    q: String,
    #[serde(default)]
    page: Option<usize>,
}

async fn search_tags(State(st): State<Shared>, Query(q): Query<SearchQuery>) -> impl IntoResponse {
    Json(st.store.search_page(&q.q, q.page.unwrap_or(1)))
}

#[derive(Deserialize)]
struct CreateBody {
    label: String,
    #[serde(default)]
    meanings: Vec<String>,
}

async fn create_tag(State(st): State<Shared>, Json(body): Json<CreateBody>) -> ApiResult<Response> {
    let tag = blocking(move || Ok(st.store.create_global_tag(&body.label, &body.meanings)?)).await?;
    Ok((StatusCode::CREATED, Json(tag)).into_response())
}

async fn get_tag(State(st): State<Shared>, Path(raw): Path<String>) -> ApiResult<Response> {
    if let Some(stem) = raw.strip_suffix(".ttl") {
        let slug = parse_slug(stem)?;
        let tag = st
            .store
            .get(&slug)
            .ok_or_else(|| ApiError::not_found(format!("global tag {stem:?}")))?;
        let ctx = blocking({
            let st = st.clone();
            move || Ok(st.rdf_context())
        })
        .await?;
        return Ok(turtle(export_turtle(&[tag], &ctx)));
    }
    let slug = parse_slug(&raw)?;
    st.store
        .get(&slug)
        .map(|t| Json(t).into_response())
        .ok_or_else(|| ApiError::not_found(format!("global tag {raw:?}")))
}

async fn export_all(State(st): State<Shared>) -> ApiResult<Response> {
    let tags = st.store.all();
    let ctx = blocking(move || Ok(st.rdf_context())).await?;
    Ok(turtle(export_turtle(&tags, &ctx)))
}

#[derive(Deserialize)]
struct LinkBody {
    portal_id: String,
    tag_name: String,
}

async fn add_link(
    State(st): State<Shared>,
    Path(raw): Path<String>,
    Json(body): Json<LinkBody>,
) -> ApiResult<Json<GlobalTag>> {
    let slug = parse_slug(&raw)?;
    let link = LocalLink::new(body.portal_id, body.tag_name);
    Ok(Json(blocking(move || Ok(st.store.link_local_tag(&slug, link)?)).await?))
}

async fn remove_link(
    State(st): State<Shared>,
    Path(raw): Path<String>,
    Json(body): Json<LinkBody>,
) -> ApiResult<Json<GlobalTag>> {
    let slug = parse_slug(&raw)?;
    let link = LocalLink::new(body.portal_id, body.tag_name);
    Ok(Json(
        blocking(move || Ok(st.store.unlink_local_tag(&slug, link)?)).await?,
    ))
}

#[derive(Deserialize)]
struct RelationBody {
    kind: RelationKind,
    target: String,
}

async fn change_relation(st: Shared, raw: String, body: RelationBody, add: bool) -> ApiResult<Json<GlobalTag>> {
    let slug = parse_slug(&raw)?;
    let target = parse_slug(&body.target)?;
    let tag = blocking(move || {
        if add {
            st.store.relate(&slug, body.kind, &target)?;
        } else {
            st.store.unrelate(&slug, body.kind, &target)?;
        }
        st.store
            .get(&slug)
            .ok_or_else(|| ApiError::not_found(format!("global tag {slug}")))
    })
    .await?;
    Ok(Json(tag))
}

async fn add_relation(
    State(st): State<Shared>,
    Path(raw): Path<String>,
    Json(body): Json<RelationBody>,
) -> ApiResult<Json<GlobalTag>> {
    change_relation(st, raw, body, true).await
}

async fn remove_relation(
    State(st): State<Shared>,
    Path(raw): Path<String>,
    Json(body): Json<RelationBody>,
) -> ApiResult<Json<GlobalTag>> {
    change_relation(st, raw, body, false).await
}

#[derive(Serialize)]
struct TagView {
    name: String,
    canonical: String,
    usage_count: u64,
}

#[derive(Serialize)]
struct PortalView {
    portal_id: String,
    base_url: String,
    locale: String,
    locale_estimated: bool,
    dataset_count: usize,
    tag_count: usize,
    tags: Vec<TagView>,
}

async fn list_portals(State(st): State<Shared>) -> ApiResult<Json<Vec<PortalView>>> {
    let corpus =
        blocking(move || Corpus::load_dir(st.workspace.dir()).map_err(|e| ApiError::internal(e.to_string()))).await?;
    Ok(Json(
        corpus
            .snapshots()
            .iter()
            .map(|s| PortalView {
                portal_id: s.portal_id.clone(),
                base_url: s.base_url.clone(),
                locale: s.locale.clone(),
                locale_estimated: s.locale_estimated,
                dataset_count: s.datasets.len(),
                tag_count: s.tags.len(),
                tags: s
                    .tags
                    .iter()
                    .map(|t| TagView {
                        name: t.name().to_string(),
                        canonical: t.canonical().to_string(),
                        usage_count: t.usage_count,
                    })
                    .collect(),
            })
            .collect(),
    ))
}

#[derive(Deserialize)]
struct TierQuery {
    tier: Option<String>,
}

fn parse_tiers(raw: Option<&str>) -> ApiResult<Vec<Tier>> {
    match raw {
        None | Some("") | Some("all") => Ok(Tier::ALL.to_vec()),
        Some(s) => s
            .parse::<u8>()
            .ok()
            .and_then(|n| Tier::try_from(n).ok())
            .map(|t| vec![t])
            .ok_or_else(|| ApiError::invalid(format!("tier must be 1, 2, 3 or all, got {s:?}"))),
    }
}

async fn list_suggestions(
    State(st): State<Shared>,
    Path(portal): Path<String>,
    Query(q): Query<TierQuery>,
) -> ApiResult<Response> {
    let tiers = parse_tiers(q.tier.as_deref())?;
    let list = blocking(move || Ok(st.workspace.suggestions(&portal, &tiers, st.provider(), st.threshold)?)).await?;
    Ok(Json(list).into_response())
}

#[derive(Deserialize)]
struct AcceptBody {
    survivor: String,
}

async fn accept(
    State(st): State<Shared>,
    Path((portal, sid)): Path<(String, String)>,
    Json(body): Json<AcceptBody>,
) -> ApiResult<Response> {
    let outcome = blocking(move || {
        let _guard = st.merge_lock.lock().unwrap_or_else(|e| e.into_inner());
        Ok(st.workspace.accept(
            &portal,
            &SuggestionId::from(sid.as_str()),
            &body.survivor,
            st.provider(),
            st.threshold,
            st.clock.as_ref(),
        )?)
    })
    .await?;
    Ok(Json(json!({
        "applied": outcome.applied,
        "portal_id": outcome.snapshot.portal_id,
        "tag_count": outcome.snapshot.tags.len(),
        "dataset_count": outcome.snapshot.datasets.len(),
    }))
    .into_response())
}

async fn reject(State(st): State<Shared>, Path((portal, sid)): Path<(String, String)>) -> ApiResult<Response> {
    blocking(move || {
        let _guard = st.merge_lock.lock().unwrap_or_else(|e| e.into_inner());
        Ok(st
            .workspace
            .reject(&portal, &SuggestionId::from(sid.as_str()), st.provider(), st.threshold)?)
    })
    .await?;
    Ok(Json(json!({"rejected": true})).into_response())
}

/// All `/api/v1` routes, plus static UI assets from `assets` when given.
pub fn router(state: Shared, assets: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/tags", get(search_tags).post(create_tag))
        .route("/tags/{slug}", get(get_tag))
        .route("/tags/{slug}/links", post(add_link).delete(remove_link))
        .route("/tags/{slug}/relations", post(add_relation).delete(remove_relation))
        .route("/export.ttl", get(export_all))
        .route("/portals", get(list_portals))
        .route("/portals/{id}/suggestions", get(list_suggestions))
        .route("/portals/{id}/suggestions/{sid}/accept", post(accept))
        .route("/portals/{id}/suggestions/{sid}/reject", post(reject));
    let app = Router::new().nest("/api/v1", api).with_state(state);
    match assets {
        Some(dir) if dir.is_dir() => app.fallback_service(ServeDir::new(dir)),
        _ => app,
    }
}

/// Serves `router` on `listener` until the process is stopped.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app).await
}
