use std::collections::BTreeSet;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use ska_core::agreement::ReportPhase;
use ska_core::codebook::RuleExample;
use ska_core::document::{export_corpus, import_corpus, CorpusDocument, ExportOptions};
use ska_core::workbench::{RoundStatus, Submission};
use ska_core::{
    AnnotatorId, ChapterId, Error, IngestOptions, ResolutionInput, ReviewDecisionInput, RoundPhase,
    RuleChange, SectionId, TextbookId, Workbench,
};

use crate::{actor, issue_token, ApiError, AppState};

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| Error::Validation(format!("request body: {e}")).into())
}

fn round_key(wb: &Workbench, key: &str) -> ApiResult<ska_core::RoundId> {
    Ok(wb.find_round(key)?.id.clone())
}

pub async fn healthz() -> Json<Value> {
    Json(json!({"status": "ok", "service": "ska", "version": ska_core::VERSION}))
}

// ---- corpus -----------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestBody {
    #[serde(default)]
    id: Option<TextbookId>,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    min_section_chars: Option<usize>,
    text: String,
}

fn textbook_summary(tb: &ska_core::Textbook) -> Value {
    json!({
        "id": tb.id,
        "title": tb.title,
        "section_count": tb.section_count(),
        "chapters": tb.chapters.iter().map(|c| json!({
            "id": c.id,
            "title": c.title,
            "sections": c.sections.iter().map(|s| s.id.clone()).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    })
}

pub async fn ingest(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    state.require_admin(&headers)?;
    let body: IngestBody = parse(&body)?;
    let summary = state
        .mutate(|wb| {
            let options = IngestOptions {
                textbook_id: body
                    .id
                    .unwrap_or_else(|| IngestOptions::default().textbook_id),
                title: body.title,
                min_section_chars: body
                    .min_section_chars
                    .unwrap_or(wb.config().min_section_chars),
            };
            Ok(textbook_summary(wb.ingest(&body.text, &options)?))
        })
        .await?;
    Ok((StatusCode::CREATED, Json(summary)).into_response())
}

pub async fn list_textbooks(State(state): State<AppState>) -> Json<Value> {
    let wb = state.read().await;
    Json(Value::Array(
        wb.textbooks().iter().map(textbook_summary).collect(),
    ))
}

pub async fn get_textbook(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let wb = state.read().await;
    Ok(Json(wb.textbook(&id.into())?).into_response())
}

// ---- annotators -------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotatorBody {
    id: AnnotatorId,
    #[serde(default)]
    display_name: Option<String>,
    #[serde(default)]
    token: Option<String>,
}

pub async fn add_annotator(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    state.require_admin(&headers)?;
    let body: AnnotatorBody = parse(&body)?;
    let token = body.token.unwrap_or_else(issue_token);
    let name = body.display_name.unwrap_or_else(|| body.id.to_string());
    let annotator = state
        .mutate(|wb| {
            Ok(wb
                .register_annotator(body.id, &name, token.clone())?
                .clone())
        })
        .await?;
    let mut out = serde_json::to_value(annotator).expect("annotator serializes");
    out["token"] = Value::String(token);
    Ok((StatusCode::CREATED, Json(out)).into_response())
}

pub async fn list_annotators(State(state): State<AppState>) -> Json<Value> {
    let wb = state.read().await;
    Json(json!(wb.annotators().values().collect::<Vec<_>>()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QualificationTestBody {
    section_id: SectionId,
    gold: Vec<String>,
    #[serde(default)]
    threshold: Option<f64>,
}

pub async fn set_qualification_test(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    state.require_admin(&headers)?;
    let body: QualificationTestBody = parse(&body)?;
    let test = state
        .mutate(|wb| {
            Ok(wb
                .set_qualification_test(body.section_id, &body.gold, body.threshold)?
                .clone())
        })
        .await?;
    Ok(Json(test).into_response())
}

pub async fn get_qualification_test(State(state): State<AppState>) -> ApiResult<Response> {
    let wb = state.read().await;
    let test = wb.qualification_test().ok_or_else(|| Error::NotFound {
        kind: "qualification test",
        id: "current".into(),
    })?;
    Ok(Json(test).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QualifyBody {
    surfaces: Vec<String>,
}

pub async fn qualify(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let id = AnnotatorId::from(id);
    if !state.is_admin(&headers) {
        let who = actor(&*state.read().await, &headers)?;
        if who != id {
            return Err(
                Error::Authorization(format!("{who} cannot take the test for {id}")).into(),
            );
        }
    }
    let body: QualifyBody = parse(&body)?;
    let outcome = state.mutate(|wb| wb.qualify(&id, &body.surfaces)).await?;
    Ok(Json(outcome).into_response())
}

// ---- rounds -----------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RoundBody {
    chapter_id: ChapterId,
    participants: BTreeSet<AnnotatorId>,
    #[serde(default)]
    lead: Option<AnnotatorId>,
}

pub async fn create_round(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    state.require_admin(&headers)?;
    let body: RoundBody = parse(&body)?;
    let status = state
        .mutate(|wb| {
            let id = wb
                .create_round(&body.chapter_id, body.participants, body.lead)?
                .id
                .clone();
            wb.round_status(&id)
        })
        .await?;
    Ok((StatusCode::CREATED, Json(status)).into_response())
}

pub async fn list_rounds(State(state): State<AppState>) -> ApiResult<Response> {
    let wb = state.read().await;
    let all = wb
        .rounds()
        .iter()
        .map(|r| wb.round_status(&r.id))
        .collect::<ska_core::Result<Vec<RoundStatus>>>()?;
    Ok(Json(all).into_response())
}

pub async fn get_round(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let wb = state.read().await;
    let id = round_key(&wb, &id)?;
    Ok(Json(wb.round_status(&id)?).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SubmitBody {
    #[serde(default)]
    expected_version: Option<u64>,
    #[serde(default)]
    items: Value,
}

fn items<T: DeserializeOwned>(v: Value) -> ApiResult<Vec<T>> {
    if v.is_null() {
        return Ok(Vec::new());
    }
    serde_json::from_value(v).map_err(|e| Error::Validation(format!("items: {e}")).into())
}

pub async fn submit(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path((id, phase)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Response> {
    let (round_id, who) = {
        let wb = state.read().await;
        (round_key(&wb, &id)?, actor(&wb, &headers)?)
    };
    let phase: RoundPhase = phase.parse()?;
    let body: SubmitBody = parse(&body)?;
    let submission = match phase {
        RoundPhase::Annotating => Submission::Annotations(items(body.items)?),
        RoundPhase::MissedReview => Submission::ReviewDecisions(items(body.items)?),
        RoundPhase::Discussion => Submission::Resolutions(items(body.items)?),
        RoundPhase::CodebookUpdate => Submission::CodebookChanges(items(body.items)?),
        RoundPhase::Closed => {
            return Err(Error::Validation("closed rounds take no submissions".into()).into());
        }
    };
    let status = state
        .mutate(|wb| {
            wb.submit(&round_id, &who, submission, body.expected_version)?;
            wb.round_status(&round_id)
        })
        .await?;
    Ok(Json(status).into_response())
}

pub async fn review_file(
    State(state): State<AppState>,
    Path((id, annotator)): Path<(String, String)>,
) -> ApiResult<Response> {
    let wb = state.read().await;
    let round_id = round_key(&wb, &id)?;
    wb.annotator(&annotator.as_str().into())?;
    Ok(Json(wb.review_file(&round_id, &annotator.into())?).into_response())
}

pub async fn review_decision(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path((id, annotator)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Response> {
    let (round_id, who) = {
        let wb = state.read().await;
        (round_key(&wb, &id)?, actor(&wb, &headers)?)
    };
    if who.as_str() != annotator {
        return Err(Error::Authorization(format!("{who} cannot review for {annotator}")).into());
    }
    let decision: ReviewDecisionInput = parse(&body)?;
    let delta = state
        .mutate(|wb| wb.apply_review_decision(&round_id, &who, &decision))
        .await?;
    Ok((StatusCode::CREATED, Json(delta)).into_response())
}

pub async fn disagreements(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let wb = state.read().await;
    let round_id = round_key(&wb, &id)?;
    Ok(Json(wb.disagreements(&round_id)?).into_response())
}

pub async fn list_resolutions(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let wb = state.read().await;
    let round_id = round_key(&wb, &id)?;
    let list: Vec<_> = wb
        .resolutions()
        .iter()
        .filter(|r| r.round_id == round_id)
        .collect();
    Ok(Json(list).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResolutionsBody {
    #[serde(default)]
    expected_version: Option<u64>,
    #[serde(default)]
    items: Vec<ResolutionInput>,
}

pub async fn resolve(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let (round_id, who) = {
        let wb = state.read().await;
        (round_key(&wb, &id)?, actor(&wb, &headers)?)
    };
    let body: ResolutionsBody = parse(&body)?;
    let status = state
        .mutate(|wb| {
            wb.submit(
                &round_id,
                &who,
                Submission::Resolutions(body.items),
                body.expected_version,
            )?;
            wb.round_status(&round_id)
        })
        .await?;
    Ok(Json(status).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CloseBody {
    #[serde(default)]
    expected_version: Option<u64>,
    #[serde(default)]
    changes: Vec<RuleChange>,
}

pub async fn close(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let (round_id, who) = {
        let wb = state.read().await;
        (round_key(&wb, &id)?, actor(&wb, &headers)?)
    };
    let body: CloseBody = if body.is_empty() {
        CloseBody {
            expected_version: None,
            changes: vec![],
        }
    } else {
        parse(&body)?
    };
    let (added, status) = state
        .mutate(|wb| {
            wb.round(&round_id)?.expect_version(body.expected_version)?;
            let added = wb.close_round(&round_id, &who, body.changes)?;
            Ok((added, wb.round_status(&round_id)?))
        })
        .await?;
    Ok(Json(json!({"round": status, "added_rules": added})).into_response())
}

#[derive(Deserialize)]
pub struct AgreementQuery {
    phase: Option<String>,
    section: Option<String>,
}

pub async fn agreement(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<AgreementQuery>,
) -> ApiResult<Response> {
    let phase: ReportPhase = q.phase.as_deref().unwrap_or("before").parse()?;
    let wb = state.read().await;
    let round_id = round_key(&wb, &id)?;
    let report = match q.section {
        Some(section) => wb.section_report(&round_id, &section.into(), phase)?,
        None => wb.agreement_report(&round_id, phase)?,
    };
    Ok(Json(report).into_response())
}

// ---- codebook and statistics -------------------------------------------

fn parse_u32(name: &str, value: &str) -> ApiResult<u32> {
    value.trim().parse().map_err(|_| {
        Error::Validation(format!(
            "{name} must be a non-negative integer, got {value:?}"
        ))
        .into()
    })
}

#[derive(Deserialize)]
pub struct CodebookQuery {
    as_of_round: Option<String>,
    format: Option<String>,
}

pub async fn codebook(
    State(state): State<AppState>,
    Query(q): Query<CodebookQuery>,
) -> ApiResult<Response> {
    let wb = state.read().await;
    match q.format.as_deref() {
        Some("markdown" | "md") => {
            return Ok((
                [(header::CONTENT_TYPE, "text/markdown; charset=utf-8")],
                wb.codebook().to_markdown(),
            )
                .into_response())
        }
        None | Some("json") => {}
        Some(other) => return Err(Error::Validation(format!("unknown format {other:?}")).into()),
    }
    Ok(match q.as_of_round {
        Some(r) => Json(wb.codebook().version_at(parse_u32("as_of_round", &r)?)).into_response(),
        None => Json(wb.codebook()).into_response(),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedBody {
    text: String,
    #[serde(default)]
    examples: Vec<RuleExample>,
}

pub async fn seed_rule(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    state.require_admin(&headers)?;
    let body: SeedBody = parse(&body)?;
    let rule = state
        .mutate(|wb| Ok(wb.seed_rule(&body.text, body.examples)?.clone()))
        .await?;
    Ok((StatusCode::CREATED, Json(rule)).into_response())
}

pub async fn convergence(State(state): State<AppState>) -> Json<Value> {
    Json(json!(state.read().await.convergence()))
}

#[derive(Deserialize)]
pub struct StatsQuery {
    from: Option<String>,
    to: Option<String>,
    format: Option<String>,
}

pub async fn stats_table(
    State(state): State<AppState>,
    Query(q): Query<StatsQuery>,
) -> ApiResult<Response> {
    let range = match (q.from, q.to) {
        (None, None) => None,
        (from, to) => Some((
            from.map(|v| parse_u32("from", &v))
                .transpose()?
                .unwrap_or(0),
            to.map(|v| parse_u32("to", &v))
                .transpose()?
                .unwrap_or(u32::MAX),
        )),
    };
    let table = state.read().await.stats_table(range)?;
    Ok(match q.format.as_deref().unwrap_or("json") {
        "json" => Json(table).into_response(),
        "csv" => (
            [(header::CONTENT_TYPE, "text/csv; charset=utf-8")],
            table.to_csv()?,
        )
            .into_response(),
        "text" => (
            [(header::CONTENT_TYPE, "text/plain; charset=utf-8")],
            table.to_text(),
        )
            .into_response(),
        other => return Err(Error::Validation(format!("unknown format {other:?}")).into()),
    })
}

// ---- interchange -------------------------------------------------------

#[derive(Deserialize)]
pub struct ExportQuery {
    include_text: Option<String>,
    phase: Option<String>,
}

pub async fn export(
    State(state): State<AppState>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    let include_text = match q.include_text.as_deref().map(str::trim) {
        None | Some("true" | "1") => true,
        Some("false" | "0") => false,
        Some(other) => {
            return Err(Error::Validation(format!(
                "include_text must be true or false, got {other:?}"
            ))
            .into())
        }
    };
    let phase_filter = q
        .phase
        .as_deref()
        .map(str::parse::<ReportPhase>)
        .transpose()?;
    let doc = export_corpus(
        &*state.read().await,
        ExportOptions {
            include_text,
            phase_filter,
        },
    );
    Ok(([(header::CONTENT_TYPE, "application/json")], doc.to_json()?).into_response())
}

pub async fn import(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    state.require_admin(&headers)?;
    let text =
        std::str::from_utf8(&body).map_err(|e| Error::Validation(format!("request body: {e}")))?;
    let doc = CorpusDocument::from_json(text)?;
    let summary = state
        .mutate(|wb| {
            let mut next = import_corpus(&doc)?;
            next.adopt_tokens(wb);
            *wb = next;
            wb.validate()
        })
        .await?;
    Ok(Json(summary).into_response())
}

pub async fn validate(State(state): State<AppState>) -> ApiResult<Response> {
    Ok(Json(state.read().await.validate()?).into_response())
}
