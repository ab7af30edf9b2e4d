use axum::extract::FromRequestParts;
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use dalton_core::model::TimestampMs;
use dalton_core::store::Role;

use crate::{ApiError, AppState};

/// Who may call what. Every route appears here; `None` marks a public route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    PostAnnotation,
    ListDevices,
    ExecCommand,
    GetCommand,
    GetSeries,
    GetHhi,
    GetErrors,
    Stream,
    Health,
}

impl Endpoint {
    pub const ALL: [Endpoint; 9] = [
        Endpoint::PostAnnotation,
        Endpoint::ListDevices,
        Endpoint::ExecCommand,
        Endpoint::GetCommand,
        Endpoint::GetSeries,
        Endpoint::GetHhi,
        Endpoint::GetErrors,
        Endpoint::Stream,
        Endpoint::Health,
    ];

    pub fn allowed(self) -> Option<&'static [Role]> {
        use Role::*;
        const ANY: &[Role] = &[Admin, Viewer, Occupant];
        match self {
            Endpoint::PostAnnotation => Some(&[Occupant, Admin]),
            Endpoint::ExecCommand => Some(&[Admin]),
            Endpoint::GetCommand => Some(&[Admin, Viewer]),
            Endpoint::ListDevices | Endpoint::GetSeries | Endpoint::GetHhi | Endpoint::GetErrors | Endpoint::Stream => {
                Some(ANY)
            }
            Endpoint::Health => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub user_id: String,
    pub role: Role,
    pub expiry_ms: Option<TimestampMs>,
    pub site_id: Option<String>,
}

impl Session {
    pub fn require(&self, endpoint: Endpoint) -> Result<(), ApiError> {
        match endpoint.allowed() {
            Some(roles) if !roles.contains(&self.role) => Err(ApiError::forbidden(format!(
                "{:?} may not call {endpoint:?}",
                self.role
            ))),
            _ => Ok(()),
        }
    }

    pub fn expired(&self, now_ms: TimestampMs) -> bool {
        self.expiry_ms.is_some_and(|e| now_ms >= e)
    }
}

impl FromRequestParts<AppState> for Session {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let header = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .ok_or_else(|| ApiError::unauthorized("missing bearer token"))?;
        let token = header
            .strip_prefix("Bearer ")
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| ApiError::unauthorized("malformed authorization header"))?;
        let user = state
            .store
            .user_by_token(token)
            .ok_or_else(|| ApiError::unauthorized("unknown token"))?;
        let now = state.pipeline.now_ms();
        if user.is_expired(now) {
            return Err(ApiError::unauthorized("token expired"));
        }
        Ok(Session {
            user_id: user.user_id,
            role: user.role,
            expiry_ms: user.token_expiry_ms,
            site_id: user.site_id,
        })
    }
}
