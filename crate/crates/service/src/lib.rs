//! Study backend: serves side-by-side video pairs to annotators, records
//! forced-choice votes in an append-only JSON Lines log and reports live Elo
//! ratings over that log.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Query, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lipkit_core::ranking::{bootstrap_elo, elo_ratings_with_models, read_jsonl};
use lipkit_core::{ComparisonRecord, EloConfig, RankingError, RatingTable, Winner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

pub const DEFAULT_ASSIGNMENT_TTL: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("the pair pool is empty")]
    EmptyPool,
    #[error("annotator id is required")]
    MissingAnnotator,
    #[error("unknown annotator {0:?}")]
    UnknownAnnotator(String),
    #[error("no active assignment {0:?} for this annotator")]
    UnknownAssignment(String),
    #[error("assignment {0:?} has expired")]
    Expired(String),
    #[error("assignment {0:?} already has a vote")]
    Duplicate(String),
    #[error("invalid pair pool: {0}")]
    BadPool(String),
    #[error("vote log {path}: {message}")]
    BadLog { path: String, message: String },
    #[error(transparent)]
    Ranking(#[from] RankingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            Self::EmptyPool | Self::Duplicate(_) => StatusCode::CONFLICT,
            Self::MissingAnnotator | Self::UnknownAnnotator(_) => StatusCode::BAD_REQUEST,
            Self::UnknownAssignment(_) | Self::Expired(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = Json(serde_json::json!({ "error": self.to_string() }));
        (self.status(), body).into_response()
    }
}

/// One candidate comparison. `media_a` and `media_b` are paths under the
/// media directory or absolute URLs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolPair {
    pub pair_id: String,
    pub model_a: String,
    pub model_b: String,
    pub media_a: String,
    pub media_b: String,
}

/// Reads a JSON array of [`PoolPair`].
pub fn read_pool(path: &Path) -> Result<Vec<PoolPair>, ServiceError> {
    let text = std::fs::read_to_string(path)?;
    let pool: Vec<PoolPair> = serde_json::from_str(&text)
        .map_err(|e| ServiceError::BadPool(format!("{}: {e}", path.display())))?;
    validate_pool(&pool)?;
    Ok(pool)
}

pub fn validate_pool(pool: &[PoolPair]) -> Result<(), ServiceError> {
    let mut ids = HashSet::new();
    for p in pool {
        if !ids.insert(p.pair_id.as_str()) {
            return Err(ServiceError::BadPool(format!(
                "duplicate pair_id {:?}",
                p.pair_id
            )));
        }
        if p.model_a == p.model_b {
            return Err(ServiceError::BadPool(format!(
                "pair {:?} compares model {:?} with itself",
                p.pair_id, p.model_a
            )));
        }
    }
    Ok(())
}

/// All pairs over `models` with media named `<model>/<clip>.mp4`.
pub fn round_robin_pool(models: &[&str], clip: &str) -> Vec<PoolPair> {
    let mut pool = Vec::new();
    for (i, a) in models.iter().enumerate() {
        for b in &models[i + 1..] {
            pool.push(PoolPair {
                pair_id: format!("{a}-vs-{b}-{clip}"),
                model_a: a.to_string(),
                model_b: b.to_string(),
                media_a: format!("{a}/{clip}.mp4"),
                media_b: format!("{b}/{clip}.mp4"),
            });
        }
    }
    pool
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Instant;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Instant {
        Instant::now()
    }
}

/// A clock that only moves when told to.
pub struct ManualClock {
    base: Instant,
    offset: Mutex<Duration>,
}

impl ManualClock {
    pub fn new() -> Self {
        Self {
            base: Instant::now(),
            offset: Mutex::new(Duration::ZERO),
        }
    }

    pub fn advance(&self, by: Duration) {
        *self.offset.lock().unwrap() += by;
    }
}

impl Default for ManualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Instant {
        self.base + *self.offset.lock().unwrap()
    }
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub pool: Vec<PoolPair>,
    pub log_path: PathBuf,
    pub elo: EloConfig,
    /// Seeds pair selection and side order.
    pub seed: u64,
    pub assignment_ttl: Duration,
    /// When set, only these annotator ids may request pairs.
    pub annotators: Option<BTreeSet<String>>,
    /// URL prefix prepended to relative media paths.
    pub media_prefix: String,
}

impl StudyConfig {
    pub fn new(pool: Vec<PoolPair>, log_path: PathBuf) -> Self {
        Self {
            pool,
            log_path,
            elo: EloConfig::default(),
            seed: 0,
            assignment_ttl: DEFAULT_ASSIGNMENT_TTL,
            annotators: None,
            media_prefix: "/media".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Left,
    Right,
}

/// What an annotator sees: two videos in a randomized left/right order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAssignment {
    pub assignment_id: String,
    pub pair_id: String,
    pub annotator: String,
    pub media_url_left: String,
    pub media_url_right: String,
    pub expires_in_s: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRequest {
    pub assignment_id: String,
    pub choice: Choice,
    #[serde(default)]
    pub annotator: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteAck {
    pub assignment_id: String,
    pub log_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub pairs: usize,
    pub votes: usize,
}

struct Assignment {
    pair: usize,
    annotator: String,
    left_is_a: bool,
    issued: Instant,
    voted: bool,
}

struct Inner {
    rng: ChaCha8Rng,
    next_id: u64,
    assignments: HashMap<String, Assignment>,
    votes: Vec<ComparisonRecord>,
    log: File,
}

pub struct StudyState {
    config: StudyConfig,
    models: Vec<String>,
    clock: Arc<dyn Clock>,
    inner: Mutex<Inner>,
}

fn media_url(prefix: &str, media: &str) -> String {
    if media.contains("://") {
        media.to_string()
    } else {
        format!(
            "{}/{}",
            prefix.trim_end_matches('/'),
            media.trim_start_matches('/')
        )
    }
}

impl StudyState {
    /// Validates the pool, replays an existing vote log and opens it for
    /// appending.
    pub fn open(config: StudyConfig, clock: Arc<dyn Clock>) -> Result<Self, ServiceError> {
        validate_pool(&config.pool)?;
        config.elo.validate()?;
        let votes = if config.log_path.exists() {
            read_jsonl(&config.log_path).map_err(|e| ServiceError::BadLog {
                path: config.log_path.display().to_string(),
                message: e.to_string(),
            })?
        } else {
            Vec::new()
        };
        let pair_ids: HashSet<&str> = config.pool.iter().map(|p| p.pair_id.as_str()).collect();
        if let Some((i, r)) = votes
            .iter()
            .enumerate()
            .find(|(_, r)| !pair_ids.contains(r.pair_id.as_str()))
        {
            return Err(ServiceError::BadLog {
                path: config.log_path.display().to_string(),
                message: format!(
                    "record {} references pair {:?} outside the pool",
                    i + 1,
                    r.pair_id
                ),
            });
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&config.log_path)?;
        let models: BTreeSet<String> = config
            .pool
            .iter()
            .flat_map(|p| [p.model_a.clone(), p.model_b.clone()])
            .collect();
        Ok(Self {
            inner: Mutex::new(Inner {
                rng: ChaCha8Rng::seed_from_u64(config.seed),
                next_id: 0,
                assignments: HashMap::new(),
                votes,
                log,
            }),
            models: models.into_iter().collect(),
            config,
            clock,
        })
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    fn check_annotator<'a>(&self, annotator: Option<&'a str>) -> Result<&'a str, ServiceError> {
        let id = annotator
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or(ServiceError::MissingAnnotator)?;
        match &self.config.annotators {
            Some(allowed) if !allowed.contains(id) => {
                Err(ServiceError::UnknownAnnotator(id.to_string()))
            }
            _ => Ok(id),
        }
    }

    fn expired(&self, a: &Assignment, now: Instant) -> bool {
        now.saturating_duration_since(a.issued) >= self.config.assignment_ttl
    }

    /// Draws a pool entry uniformly with a random side order and records the
    /// assignment.
    pub fn serve_pair(&self, annotator: Option<&str>) -> Result<PairAssignment, ServiceError> {
        let annotator = self.check_annotator(annotator)?;
        if self.config.pool.is_empty() {
            return Err(ServiceError::EmptyPool);
        }
        let now = self.clock.now();
        let mut inner = self.inner.lock().unwrap();
        let ttl = self.config.assignment_ttl;
        inner
            .assignments
            .retain(|_, a| now.saturating_duration_since(a.issued) < ttl);
        let pair = inner.rng.random_range(0..self.config.pool.len());
        let left_is_a = inner.rng.random_bool(0.5);
        let tag: u32 = inner.rng.random();
        inner.next_id += 1;
        let assignment_id = format!("{}-{tag:08x}", inner.next_id);
        inner.assignments.insert(
            assignment_id.clone(),
            Assignment {
                pair,
                annotator: annotator.to_string(),
                left_is_a,
                issued: now,
                voted: false,
            },
        );
        drop(inner);

        let p = &self.config.pool[pair];
        let (left, right) = if left_is_a {
            (&p.media_a, &p.media_b)
        } else {
            (&p.media_b, &p.media_a)
        };
        Ok(PairAssignment {
            assignment_id,
            pair_id: p.pair_id.clone(),
            annotator: annotator.to_string(),
            media_url_left: media_url(&self.config.media_prefix, left),
            media_url_right: media_url(&self.config.media_prefix, right),
            expires_in_s: ttl.as_secs(),
        })
    }

    /// Resolves the choice through the recorded side order, appends the
    /// record to the log file and syncs it before acknowledging.
    pub fn vote(&self, request: &VoteRequest) -> Result<VoteAck, ServiceError> {
        let annotator = self.check_annotator(request.annotator.as_deref())?;
        let now = self.clock.now();
        let mut inner = self.inner.lock().unwrap();
        let id = &request.assignment_id;
        let a = match inner.assignments.get(id) {
            Some(a) if a.annotator == annotator => a,
            _ => return Err(ServiceError::UnknownAssignment(id.clone())),
        };
        if self.expired(a, now) {
            return Err(ServiceError::Expired(id.clone()));
        }
        if a.voted {
            return Err(ServiceError::Duplicate(id.clone()));
        }
        let p = &self.config.pool[a.pair];
        let winner = match (request.choice, a.left_is_a) {
            (Choice::Left, true) | (Choice::Right, false) => Winner::A,
            (Choice::Left, false) | (Choice::Right, true) => Winner::B,
        };
        let record = ComparisonRecord {
            pair_id: p.pair_id.clone(),
            model_a: p.model_a.clone(),
            model_b: p.model_b.clone(),
            winner,
            annotator: annotator.to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        };
        let line = format!("{}\n", record.to_json_line());
        inner.log.write_all(line.as_bytes())?;
        inner.log.sync_data()?;
        inner.votes.push(record);
        if let Some(a) = inner.assignments.get_mut(id) {
            a.voted = true;
        }
        Ok(VoteAck {
            assignment_id: id.clone(),
            log_length: inner.votes.len(),
        })
    }

    /// A consistent copy of the vote log.
    pub fn votes(&self) -> Vec<ComparisonRecord> {
        self.inner.lock().unwrap().votes.clone()
    }

    /// Single-pass Elo over the log in acceptance order, listing every pool
    /// model. With `bootstrap`, the bootstrap medians and intervals over the
    /// logged models instead; an empty log falls back to the single pass.
    pub fn rankings(&self, bootstrap: bool) -> Result<RatingTable, ServiceError> {
        let votes = self.votes();
        if bootstrap && !votes.is_empty() {
            Ok(bootstrap_elo(&votes, &self.config.elo)?.table)
        } else {
            Ok(elo_ratings_with_models(
                &votes,
                &self.models,
                &self.config.elo,
            )?)
        }
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            pairs: self.config.pool.len(),
            votes: self.inner.lock().unwrap().votes.len(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct PairQuery {
    annotator: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RankingsQuery {
    #[serde(default)]
    bootstrap: bool,
}

type Shared = Arc<StudyState>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e.to_string())))?
}

async fn health(State(state): State<Shared>) -> Json<Health> {
    Json(state.health())
}

async fn pair(
    State(state): State<Shared>,
    Query(q): Query<PairQuery>,
) -> Result<Json<PairAssignment>, ServiceError> {
    state.serve_pair(q.annotator.as_deref()).map(Json)
}

async fn vote(
    State(state): State<Shared>,
    Json(req): Json<VoteRequest>,
) -> Result<Json<VoteAck>, ServiceError> {
    blocking(move || state.vote(&req)).await.map(Json)
}

async fn rankings(
    State(state): State<Shared>,
    Query(q): Query<RankingsQuery>,
) -> Result<Json<RatingTable>, ServiceError> {
    blocking(move || state.rankings(q.bootstrap))
        .await
        .map(Json)
}

/// Routes: `GET /health`, `GET /pair?annotator=`, `POST /vote`,
/// `GET /rankings[?bootstrap=true]` and static files under `/media`.
/// Without `cors_origin` any origin is allowed.
pub fn router(state: Shared, media_dir: Option<&Path>, cors_origin: Option<HeaderValue>) -> Router {
    let cors = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE])
        .allow_origin(match cors_origin {
            Some(origin) => AllowOrigin::exact(origin),
            None => AllowOrigin::any(),
        });
    let mut app = Router::new()
        .route("/health", get(health))
        .route("/pair", get(pair))
        .route("/vote", post(vote))
        .route("/rankings", get(rankings));
    if let Some(dir) = media_dir {
        app = app.nest_service("/media", ServeDir::new(dir));
    }
    app.layer(cors).with_state(state)
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub addr: SocketAddr,
    pub media_dir: Option<PathBuf>,
    /// Allowed browser origin, for example `http://localhost:5173`.
    pub cors_origin: Option<String>,
}

/// Binds and serves until Ctrl-C.
pub async fn serve(state: Shared, options: ServeOptions) -> std::io::Result<()> {
    let origin = options
        .cors_origin
        .as_deref()
        .map(HeaderValue::from_str)
        .transpose()
        .map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("CORS origin: {e}"),
            )
        })?;
    let listener = tokio::net::TcpListener::bind(options.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "study service listening");
    let app = router(state, options.media_dir.as_deref(), origin);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(dir: &Path, pool: Vec<PoolPair>) -> (StudyState, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::new());
        let cfg = StudyConfig::new(pool, dir.join("votes.jsonl"));
        (StudyState::open(cfg, clock.clone()).unwrap(), clock)
    }

    #[test]
    fn pool_validation() {
        let mut pool = round_robin_pool(&["a", "b", "c"], "x");
        assert_eq!(pool.len(), 3);
        assert!(validate_pool(&pool).is_ok());
        pool.push(pool[0].clone());
        assert!(matches!(
            validate_pool(&pool),
            Err(ServiceError::BadPool(_))
        ));
        pool.pop();
        pool[1].model_b = pool[1].model_a.clone();
        assert!(matches!(
            validate_pool(&pool),
            Err(ServiceError::BadPool(_))
        ));
    }

    #[test]
    fn media_urls() {
        assert_eq!(media_url("/media", "m/x.mp4"), "/media/m/x.mp4");
        assert_eq!(media_url("/media/", "/m/x.mp4"), "/media/m/x.mp4");
        assert_eq!(
            media_url("/media", "https://cdn/x.mp4"),
            "https://cdn/x.mp4"
        );
    }

    #[test]
    fn expiry_boundary() {
        let dir = tempfile::tempdir().unwrap();
        let (s, clock) = state(dir.path(), round_robin_pool(&["a", "b"], "x"));
        let a = s.serve_pair(Some("ann")).unwrap();
        let b = s.serve_pair(Some("ann")).unwrap();
        clock.advance(DEFAULT_ASSIGNMENT_TTL - Duration::from_secs(1));
        let req = |id: &str| VoteRequest {
            assignment_id: id.to_string(),
            choice: Choice::Left,
            annotator: Some("ann".into()),
        };
        assert!(s.vote(&req(&a.assignment_id)).is_ok());
        clock.advance(Duration::from_secs(1));
        assert!(matches!(
            s.vote(&req(&b.assignment_id)),
            Err(ServiceError::Expired(_))
        ));
        assert_eq!(s.votes().len(), 1);
    }

    #[test]
    fn assignment_bound_to_annotator() {
        let dir = tempfile::tempdir().unwrap();
        let (s, _) = state(dir.path(), round_robin_pool(&["a", "b"], "x"));
        let a = s.serve_pair(Some("alice")).unwrap();
        let err = s
            .vote(&VoteRequest {
                assignment_id: a.assignment_id,
                choice: Choice::Right,
                annotator: Some("bob".into()),
            })
            .unwrap_err();
        assert_eq!(err.status(), StatusCode::NOT_FOUND);
    }

    #[test]
    fn allowlist() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = StudyConfig::new(
            round_robin_pool(&["a", "b"], "x"),
            dir.path().join("v.jsonl"),
        );
        cfg.annotators = Some(["alice".to_string()].into_iter().collect());
        let s = StudyState::open(cfg, Arc::new(SystemClock)).unwrap();
        assert!(s.serve_pair(Some("alice")).is_ok());
        assert_eq!(
            s.serve_pair(Some("eve")).unwrap_err().status(),
            StatusCode::BAD_REQUEST
        );
        assert_eq!(
            s.serve_pair(Some("  ")).unwrap_err().status(),
            StatusCode::BAD_REQUEST
        );
        assert_eq!(
            s.serve_pair(None).unwrap_err().status(),
            StatusCode::BAD_REQUEST
        );
    }

    #[test]
    fn replay_on_reopen_and_foreign_pair_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let pool = round_robin_pool(&["a", "b", "c"], "x");
        {
            let (s, _) = state(dir.path(), pool.clone());
            for i in 0..4 {
                let a = s.serve_pair(Some("ann")).unwrap();
                s.vote(&VoteRequest {
                    assignment_id: a.assignment_id,
                    choice: if i % 2 == 0 {
                        Choice::Left
                    } else {
                        Choice::Right
                    },
                    annotator: Some("ann".into()),
                })
                .unwrap();
            }
        }
        let (s, _) = state(dir.path(), pool.clone());
        assert_eq!(s.votes().len(), 4);
        assert_eq!(s.health().votes, 4);

        let cfg = StudyConfig::new(
            round_robin_pool(&["p", "q"], "z"),
            dir.path().join("votes.jsonl"),
        );
        assert!(matches!(
            StudyState::open(cfg, Arc::new(SystemClock)),
            Err(ServiceError::BadLog { .. })
        ));
    }
}
