//! Read-only HTTP render service over one immutable MHI.
//!
//! * `GET /meta`: configuration JSON.
//! * `GET /render?rx=&ry=&rz=&tx=&ty=&tz=&scheme=`: PNG view.
//! * `GET /weights?...&normal=i`: grayscale PNG of the blend weight of normal `i`.
//!
//! Missing pose parameters default to 0 and the scheme to `soft`. Bodies
//! depend only on the query string.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use mhi_core::blend::BlendScheme;
use mhi_core::geometry::Intrinsics;
use mhi_core::mhi::Mhi;
use mhi_core::view::{weight_png, BlendParams};
use serde::Serialize;
use serde_json::json;

use crate::commands::{render_view, view_png, with_threads};
use crate::error::CliError;
use crate::schema::{PoseSpec, MAX_ANGLE_DEG, SCHEMA_VERSION};

const CACHE_CONTROL: &str = "public, max-age=31536000, immutable";

#[derive(Clone)]
pub struct AppState {
    mhi: Arc<Mhi>,
    threads: usize,
}

impl AppState {
    pub fn new(mhi: Mhi, threads: usize) -> Self {
        AppState {
            mhi: Arc::new(mhi),
            threads,
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/meta", get(meta))
        .route("/render", get(render))
        .route("/weights", get(weights))
        .fallback(not_found)
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

#[derive(Serialize)]
struct Meta {
    format_version: u32,
    intrinsics: Intrinsics,
    normals: Vec<[f64; 3]>,
    distances_per_normal: usize,
    near_depth: f64,
    far_depth: f64,
    depths: Vec<f64>,
    schemes: Vec<&'static str>,
    pose: serde_json::Value,
}

async fn meta(State(st): State<AppState>) -> Response {
    let c = st.mhi.config();
    let body = Meta {
        format_version: SCHEMA_VERSION,
        intrinsics: *c.ref_intrinsics(),
        normals: c.normals().iter().map(|n| [n.x, n.y, n.z]).collect(),
        distances_per_normal: c.distances_per_normal(),
        near_depth: c.near_depth(),
        far_depth: c.far_depth(),
        depths: c.depths(),
        schemes: BlendScheme::ALL.iter().map(|s| s.as_str()).collect(),
        pose: json!({
            "parameters": ["rx", "ry", "rz", "tx", "ty", "tz"],
            "rotation": "intrinsic XYZ Euler angles in degrees, R = Rx(rx) Ry(ry) Rz(rz)",
            "angle_range_deg": [-MAX_ANGLE_DEG, MAX_ANGLE_DEG],
            "translation": "camera center in reference coordinates, meters",
            "direction": "maps target camera points into the reference frame",
        }),
    };
    ([(header::CACHE_CONTROL, CACHE_CONTROL)], Json(body)).into_response()
}

/// Parsed `/render` and `/weights` query.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewQuery {
    pub pose: PoseSpec,
    pub scheme: BlendScheme,
    pub normal: Option<usize>,
}

const POSE_KEYS: [&str; 6] = ["rx", "ry", "rz", "tx", "ty", "tz"];

/// Validates a query. `normal` is accepted only when `with_normal` is set.
pub fn parse_view_query(params: &[(String, String)], with_normal: bool) -> Result<ViewQuery, CliError> {
    let mut vals = [0.0f64; 6];
    let mut seen = [false; 8];
    let mut scheme = BlendScheme::Soft;
    let mut normal = None;
    for (k, v) in params {
        let slot = match POSE_KEYS.iter().position(|p| p == k) {
            Some(i) => i,
            None if k == "scheme" => 6,
            None if k == "normal" && with_normal => 7,
            None => return Err(CliError::field(k, "unknown parameter")),
        };
        if std::mem::replace(&mut seen[slot], true) {
            return Err(CliError::field(k, "given more than once"));
        }
        match slot {
            6 => scheme = v.parse().map_err(|e: mhi_core::Error| CliError::field(k, e))?,
            7 => {
                normal = Some(
                    v.parse::<usize>()
                        .map_err(|_| CliError::field(k, format!("not a normal index: {v:?}")))?,
                )
            }
            i => {
                let x: f64 = v.parse().map_err(|_| CliError::field(k, format!("not a number: {v:?}")))?;
                if !x.is_finite() {
                    return Err(CliError::field(k, "must be finite"));
                }
                if i < 3 && !(-MAX_ANGLE_DEG..=MAX_ANGLE_DEG).contains(&x) {
                    return Err(CliError::field(k, format!("angle {x} outside [-180, 180]")));
                }
                vals[i] = x;
            }
        }
    }
    if with_normal && normal.is_none() {
        return Err(CliError::field("normal", "required"));
    }
    Ok(ViewQuery {
        pose: PoseSpec {
            euler_xyz_deg: [vals[0], vals[1], vals[2]],
            translation: [vals[3], vals[4], vals[5]],
        },
        scheme,
        normal,
    })
}

fn error_response(status: StatusCode, message: &str) -> Response {
    (status, Json(json!({ "error": message }))).into_response()
}

fn png_response(bytes: Vec<u8>) -> Response {
    (
        [(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, CACHE_CONTROL)],
        bytes,
    )
        .into_response()
}

/// Renders off the async workers. Input errors become 400.
async fn respond(
    st: AppState,
    params: Vec<(String, String)>,
    with_normal: bool,
) -> Response {
    let q = match parse_view_query(&params, with_normal) {
        Ok(q) => q,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, &e.message),
    };
    if let Some(i) = q.normal {
        let n = st.mhi.config().num_normals();
        if i >= n {
            return error_response(
                StatusCode::BAD_REQUEST,
                &format!("normal: index {i} out of range (0..{n})"),
            );
        }
    }
    let job = tokio::task::spawn_blocking(move || {
        with_threads(st.threads, || {
            let view = render_view(&st.mhi, &q.pose, None, &BlendParams::with_scheme(q.scheme))?;
            match q.normal {
                Some(i) => Ok(weight_png(&view, i)?),
                None => view_png(&view),
            }
        })
    });
    match job.await {
        Ok(Ok(bytes)) => png_response(bytes),
        Ok(Err(e)) => error_response(StatusCode::BAD_REQUEST, &e.message),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, &e.to_string()),
    }
}

async fn render(State(st): State<AppState>, Query(params): Query<Vec<(String, String)>>) -> Response {
    respond(st, params, false).await
}

async fn weights(State(st): State<AppState>, Query(params): Query<Vec<(String, String)>>) -> Response {
    respond(st, params, true).await
}

async fn not_found() -> Response {
    error_response(StatusCode::NOT_FOUND, "not found")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &[(&str, &str)]) -> Vec<(String, String)> {
        s.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn empty_query_is_zero_pose_soft() {
        let v = parse_view_query(&[], false).unwrap();
        assert_eq!(v.pose, PoseSpec::default());
        assert_eq!(v.scheme, BlendScheme::Soft);
    }

    #[test]
    fn full_query() {
        let v = parse_view_query(
            &q(&[("rx", "1"), ("ry", "-180"), ("rz", "180"), ("tx", "0.5"), ("tz", "-2"), ("scheme", "hard"), ("normal", "3")]),
            true,
        )
        .unwrap();
        assert_eq!(v.pose.euler_xyz_deg, [1.0, -180.0, 180.0]);
        assert_eq!(v.pose.translation, [0.5, 0.0, -2.0]);
        assert_eq!(v.scheme, BlendScheme::Hard);
        assert_eq!(v.normal, Some(3));
    }

    #[test]
    fn rejections_name_the_parameter() {
        for (params, field) in [
            (q(&[("ry", "361")]), "ry"),
            (q(&[("tx", "abc")]), "tx"),
            (q(&[("tz", "inf")]), "tz"),
            (q(&[("scheme", "blurry")]), "scheme"),
            (q(&[("rx", "1"), ("rx", "2")]), "rx"),
            (q(&[("normal", "1")]), "normal"),
            (q(&[("zoom", "1")]), "zoom"),
        ] {
            let e = parse_view_query(&params, false).unwrap_err();
            assert!(e.message.starts_with(field), "{}", e.message);
        }
        let e = parse_view_query(&[], true).unwrap_err();
        assert!(e.message.starts_with("normal"));
    }
}
