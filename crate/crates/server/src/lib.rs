//! HTTP JSON interface to a workbench.
//!
//! Every mutation runs on a copy of the state, is persisted to the store and
//! only then becomes visible, so readers always see a committed snapshot.

mod error;
mod handlers;

use std::sync::Arc;

use axum::http::HeaderMap;
use axum::routing::{get, post};
use axum::Router;
use rand::Rng;
use ska_core::{AnnotatorId, Error, Store, Workbench};
use tokio::net::TcpListener;
use tokio::sync::{RwLock, RwLockReadGuard};

pub use error::{status_of, ApiError};

/// A fresh random bearer token.
pub fn issue_token() -> String {
    let bytes: [u8; 16] = rand::rng().random();
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    wb: RwLock<Workbench>,
    store: Option<Store>,
    admin_token: String,
}

impl AppState {
    /// `store`, when present, receives every committed state.
    pub fn new(wb: Workbench, store: Option<Store>, admin_token: String) -> Self {
        AppState {
            inner: Arc::new(Inner {
                wb: RwLock::new(wb),
                store,
                admin_token,
            }),
        }
    }

    pub async fn snapshot(&self) -> Workbench {
        self.inner.wb.read().await.clone()
    }

    async fn read(&self) -> RwLockReadGuard<'_, Workbench> {
        self.inner.wb.read().await
    }

    /// Applies `f` to a copy of the state and commits it on success.
    async fn mutate<T>(
        &self,
        f: impl FnOnce(&mut Workbench) -> ska_core::Result<T>,
    ) -> Result<T, ApiError> {
        let mut guard = self.inner.wb.write().await;
        let mut next = guard.clone();
        let out = f(&mut next)?;
        if let Some(store) = &self.inner.store {
            store.save(&next)?;
        }
        *guard = next;
        Ok(out)
    }

    fn require_admin(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        match bearer(headers) {
            Some(t) if t == self.inner.admin_token => Ok(()),
            _ => Err(Error::Authorization("this route needs the admin token".into()).into()),
        }
    }

    fn is_admin(&self, headers: &HeaderMap) -> bool {
        bearer(headers) == Some(self.inner.admin_token.as_str())
    }
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(axum::http::header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

/// The annotator owning the request's bearer token.
fn actor(wb: &Workbench, headers: &HeaderMap) -> Result<AnnotatorId, ApiError> {
    bearer(headers)
        .and_then(|t| wb.authenticate(t))
        .cloned()
        .ok_or_else(|| Error::Authorization("missing or unknown annotator token".into()).into())
}

pub fn router(state: AppState) -> Router {
    use handlers::*;
    Router::new()
        .route("/healthz", get(healthz))
        .route("/textbooks", get(list_textbooks).post(ingest))
        .route("/textbooks/{id}", get(get_textbook))
        .route("/annotators", get(list_annotators).post(add_annotator))
        .route("/annotators/{id}/qualification", post(qualify))
        .route(
            "/qualification-test",
            get(get_qualification_test).put(set_qualification_test),
        )
        .route("/rounds", get(list_rounds).post(create_round))
        .route("/rounds/{id}", get(get_round))
        .route("/rounds/{id}/submit/{phase}", post(submit))
        .route(
            "/rounds/{id}/review/{annotator}",
            get(review_file).post(review_decision),
        )
        .route("/rounds/{id}/disagreements", get(disagreements))
        .route(
            "/rounds/{id}/resolutions",
            get(list_resolutions).post(resolve),
        )
        .route("/rounds/{id}/close", post(close))
        .route("/rounds/{id}/agreement", get(agreement))
        .route("/codebook", get(codebook))
        .route("/codebook/seed", post(seed_rule))
        .route("/codebook/convergence", get(convergence))
        .route("/stats/table", get(stats_table))
        .route("/export", get(export))
        .route("/import", post(import))
        .route("/validate", get(validate))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "serving");
    axum::serve(listener, router(state)).await
}
