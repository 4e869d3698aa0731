//! Request/response couriers.
//!
//! A client sends each request on a shared service topic, embedding a reply
//! topic `reply/<client>/<correlation>` that is unique to the (client,
//! correlation) pair. Services answer on exactly that topic, so only the
//! issuing client ever sees the response. Retries reuse the correlation and
//! the client completes idempotently on the first response.
//!
//! # Request envelope, version 1
//!
//! ```text
//! offset  size  field
//! 0       4     magic "AFRQ"
//! 4       1     version (1)
//! 5       2     reply topic length R, big-endian
//! 7       R     reply topic, UTF-8
//! 7+R     2     correlation length C, big-endian
//! 9+R     C     correlation, UTF-8
//! 9+R+C   4     body length B, big-endian
//! 13+R+C  B     body
//! ```
//!
//! Zero-length reply topic or correlation marks the request malformed.
//! Responses are published with the raw body as payload and the correlation
//! in the message header.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::agent::AgentContext;
use crate::ids::{AgentId, CorrelationId};
use crate::log::{EventKind, EventRecord};
use crate::messaging::{BrokerError, Message, SubscriptionId, TopicError, TopicFilter, TopicName};
use crate::Tick;

pub const ENVELOPE_MAGIC: [u8; 4] = *b"AFRQ";
pub const ENVELOPE_VERSION: u8 = 1;
pub const REPLY_PREFIX: &str = "reply";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvelopeError {
    #[error("not a request envelope")]
    BadMagic,
    #[error("unsupported envelope version {0}")]
    UnsupportedVersion(u8),
    #[error("envelope truncated")]
    Truncated,
    #[error("{0} trailing bytes after envelope")]
    TrailingBytes(usize),
    #[error("request carries no reply topic")]
    MissingReplyTopic,
    #[error("request carries no correlation id")]
    MissingCorrelation,
    #[error("envelope field is not UTF-8")]
    NotUtf8,
    #[error("envelope field too long for its length prefix")]
    FieldTooLong,
    #[error("unreadable request body: {0}")]
    Body(String),
    #[error("invalid {field}: {source}")]
    InvalidField {
        field: &'static str,
        #[source]
        source: TopicError,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LogisticsError {
    #[error("malformed request: {0}")]
    MalformedRequest(#[from] EnvelopeError),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error("retry policy needs a positive timeout")]
    ZeroTimeout,
}

/// `reply/<client>/<correlation>`; injective because both parts are single
/// segments.
pub fn make_reply_topic(client: &AgentId, correlation: &CorrelationId) -> TopicName {
    TopicName::new(format!("{REPLY_PREFIX}/{client}/{correlation}"))
        .expect("ids are valid segments")
}

/// Splits a reply topic back into its (client, correlation) pair.
pub fn parse_reply_topic(topic: &str) -> Option<(&str, &str)> {
    let mut it = topic.split('/');
    match (it.next(), it.next(), it.next(), it.next()) {
        (Some(REPLY_PREFIX), Some(client), Some(corr), None) => Some((client, corr)),
        _ => None,
    }
}

/// Decoded request envelope. Fields are raw so a malformed request can still
/// be represented and encoded for tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestEnvelope {
    pub reply_topic: String,
    pub correlation: String,
    pub body: Vec<u8>,
}

impl RequestEnvelope {
    pub fn new(
        reply_topic: &TopicName,
        correlation: &CorrelationId,
        body: impl Into<Vec<u8>>,
    ) -> Self {
        Self {
            reply_topic: reply_topic.as_str().to_string(),
            correlation: correlation.as_str().to_string(),
            body: body.into(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, EnvelopeError> {
        let r = u16::try_from(self.reply_topic.len()).map_err(|_| EnvelopeError::FieldTooLong)?;
        let c = u16::try_from(self.correlation.len()).map_err(|_| EnvelopeError::FieldTooLong)?;
        let b = u32::try_from(self.body.len()).map_err(|_| EnvelopeError::FieldTooLong)?;
        let mut out = Vec::with_capacity(
            13 + self.reply_topic.len() + self.correlation.len() + self.body.len(),
        );
        out.extend_from_slice(&ENVELOPE_MAGIC);
        out.push(ENVELOPE_VERSION);
        out.extend_from_slice(&r.to_be_bytes());
        out.extend_from_slice(self.reply_topic.as_bytes());
        out.extend_from_slice(&c.to_be_bytes());
        out.extend_from_slice(self.correlation.as_bytes());
        out.extend_from_slice(&b.to_be_bytes());
        out.extend_from_slice(&self.body);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, EnvelopeError> {
        let mut cur = Cursor(bytes);
        if cur.take(4)? != ENVELOPE_MAGIC {
            return Err(EnvelopeError::BadMagic);
        }
        let version = cur.take(1)?[0];
        if version != ENVELOPE_VERSION {
            return Err(EnvelopeError::UnsupportedVersion(version));
        }
        let r = u16::from_be_bytes(cur.take(2)?.try_into().expect("2 bytes")) as usize;
        let reply_topic = utf8(cur.take(r)?)?;
        let c = u16::from_be_bytes(cur.take(2)?.try_into().expect("2 bytes")) as usize;
        let correlation = utf8(cur.take(c)?)?;
        let b = u32::from_be_bytes(cur.take(4)?.try_into().expect("4 bytes")) as usize;
        let body = cur.take(b)?.to_vec();
        if !cur.0.is_empty() {
            return Err(EnvelopeError::TrailingBytes(cur.0.len()));
        }
        Ok(Self {
            reply_topic,
            correlation,
            body,
        })
    }
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EnvelopeError> {
        if self.0.len() < n {
            return Err(EnvelopeError::Truncated);
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }
}

fn utf8(b: &[u8]) -> Result<String, EnvelopeError> {
    String::from_utf8(b.to_vec()).map_err(|_| EnvelopeError::NotUtf8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    pub timeout_ticks: Tick,
    pub max_retries: u32,
    pub backoff_ticks: Tick,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            timeout_ticks: 100,
            max_retries: 2,
            backoff_ticks: 0,
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), LogisticsError> {
        if self.timeout_ticks == 0 {
            return Err(LogisticsError::ZeroTimeout);
        }
        Ok(())
    }
}

/// Binds one logical request to its reply topic and retry policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestLogistic {
    pub client: AgentId,
    pub service_topic: TopicName,
    pub correlation: CorrelationId,
    pub reply_topic: TopicName,
    pub policy: RetryPolicy,
}

impl RequestLogistic {
    pub fn new(
        client: AgentId,
        service_topic: TopicName,
        correlation: CorrelationId,
        policy: RetryPolicy,
    ) -> Self {
        let reply_topic = make_reply_topic(&client, &correlation);
        Self {
            client,
            service_topic,
            correlation,
            reply_topic,
            policy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestState {
    InFlight,
    Succeeded,
    TimedOut,
}

#[derive(Debug, Clone)]
pub struct PendingRequest {
    pub logistic: RequestLogistic,
    pub deadline: Tick,
    pub attempts_used: u32,
    pub state: RequestState,
    pub first_sent: Tick,
    subscription: Option<SubscriptionId>,
    envelope: Arc<[u8]>,
}

impl PendingRequest {
    pub fn correlation(&self) -> &CorrelationId {
        &self.logistic.correlation
    }

    pub fn reply_topic(&self) -> &TopicName {
        &self.logistic.reply_topic
    }
}

/// What a response or timer meant for a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RequestOutcome {
    Succeeded {
        correlation: CorrelationId,
        attempts: u32,
        body: Vec<u8>,
    },
    TimedOut {
        correlation: CorrelationId,
        attempts: u32,
    },
}

/// Per-client table of outstanding requests.
#[derive(Debug, Clone, Default)]
pub struct ClientLogistics {
    next: u64,
    pending: BTreeMap<CorrelationId, PendingRequest>,
}

impl ClientLogistics {
    /// Timer key reserved for deadline checks. Behaviours forward timers with
    /// this key to [`ClientLogistics::on_tick`].
    pub const TIMER_KEY: u64 = u64::MAX;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, correlation: &CorrelationId) -> Option<&PendingRequest> {
        self.pending.get(correlation)
    }

    pub fn requests(&self) -> impl Iterator<Item = &PendingRequest> {
        self.pending.values()
    }

    pub fn in_flight(&self) -> usize {
        self.pending
            .values()
            .filter(|p| p.state == RequestState::InFlight)
            .count()
    }

    /// Subscribes to a fresh reply topic and publishes the request on
    /// `service_topic`.
    pub fn send_request(
        &mut self,
        ctx: &mut AgentContext<'_>,
        service_topic: TopicName,
        body: &[u8],
        policy: RetryPolicy,
    ) -> Result<CorrelationId, LogisticsError> {
        policy.validate()?;
        let correlation = CorrelationId::new(format!("k{}", self.next)).expect("valid segment");
        self.next += 1;
        let logistic =
            RequestLogistic::new(ctx.id().clone(), service_topic, correlation.clone(), policy);
        let envelope: Arc<[u8]> =
            RequestEnvelope::new(&logistic.reply_topic, &correlation, body.to_vec())
                .encode()?
                .into();
        let sub = ctx.subscribe(&TopicFilter::from(logistic.reply_topic.clone()))?;
        ctx.publish(
            logistic.service_topic.clone(),
            Arc::clone(&envelope),
            Some(correlation.clone()),
        )?;
        let now = ctx.now();
        let deadline = now + policy.timeout_ticks;
        ctx.set_timer(deadline, Self::TIMER_KEY);
        ctx.record(
            EventRecord::new(now, EventKind::RequestSent, ctx.id().as_str())
                .topic(logistic.service_topic.as_str())
                .detail(json!({
                    "correlation": correlation.as_str(),
                    "reply_topic": logistic.reply_topic.as_str(),
                    "attempt": 1,
                })),
        );
        self.pending.insert(
            correlation.clone(),
            PendingRequest {
                logistic,
                deadline,
                attempts_used: 1,
                state: RequestState::InFlight,
                first_sent: now,
                subscription: Some(sub),
                envelope,
            },
        );
        Ok(correlation)
    }

    /// Consumes a message on one of this client's reply topics. Returns
    /// `None` for duplicates, unknown correlations and foreign topics.
    pub fn handle_response(
        &mut self,
        ctx: &mut AgentContext<'_>,
        msg: &Message,
    ) -> Option<RequestOutcome> {
        let (client, corr) = parse_reply_topic(msg.topic.as_str())?;
        if client != ctx.id().as_str() {
            return None;
        }
        let correlation = CorrelationId::new(corr).ok()?;
        let req = self.pending.get_mut(&correlation)?;
        if req.state != RequestState::InFlight {
            ctx.record(
                EventRecord::new(ctx.now(), EventKind::DuplicateResponse, ctx.id().as_str())
                    .topic(msg.topic.as_str())
                    .detail(json!({ "correlation": corr })),
            );
            return None;
        }
        req.state = RequestState::Succeeded;
        if let Some(sub) = req.subscription.take() {
            let _ = ctx.unsubscribe(sub);
        }
        ctx.record(
            EventRecord::new(ctx.now(), EventKind::RequestSucceeded, ctx.id().as_str())
                .topic(msg.topic.as_str())
                .detail(json!({ "correlation": corr, "attempts": req.attempts_used })),
        );
        Some(RequestOutcome::Succeeded {
            correlation,
            attempts: req.attempts_used,
            body: msg.payload.to_vec(),
        })
    }

    /// Retries or times out every in-flight request whose deadline has
    /// passed. A retry's deadline is `now + timeout + backoff * attempts`,
    /// where `attempts` counts the attempts made before the retry.
    pub fn on_tick(&mut self, ctx: &mut AgentContext<'_>) -> Vec<RequestOutcome> {
        let now = ctx.now();
        let mut out = Vec::new();
        for req in self.pending.values_mut() {
            if req.state != RequestState::InFlight || now < req.deadline {
                continue;
            }
            let policy = req.logistic.policy;
            if req.attempts_used > policy.max_retries {
                req.state = RequestState::TimedOut;
                if let Some(sub) = req.subscription.take() {
                    let _ = ctx.unsubscribe(sub);
                }
                ctx.record(
                    EventRecord::new(now, EventKind::RequestTimedOut, ctx.id().as_str())
                        .topic(req.logistic.service_topic.as_str())
                        .detail(json!({
                            "correlation": req.logistic.correlation.as_str(),
                            "attempts": req.attempts_used,
                        })),
                );
                out.push(RequestOutcome::TimedOut {
                    correlation: req.logistic.correlation.clone(),
                    attempts: req.attempts_used,
                });
                continue;
            }
            let deadline =
                now + policy.timeout_ticks + policy.backoff_ticks * u64::from(req.attempts_used);
            req.attempts_used += 1;
            req.deadline = deadline;
            // Payload size was accepted on the first attempt.
            let _ = ctx.publish(
                req.logistic.service_topic.clone(),
                Arc::clone(&req.envelope),
                Some(req.logistic.correlation.clone()),
            );
            ctx.set_timer(deadline, Self::TIMER_KEY);
            ctx.record(
                EventRecord::new(now, EventKind::RequestRetry, ctx.id().as_str())
                    .topic(req.logistic.service_topic.as_str())
                    .detail(json!({
                        "correlation": req.logistic.correlation.as_str(),
                        "attempt": req.attempts_used,
                    })),
            );
        }
        out
    }

    /// Forgets an in-flight request without waiting for its deadline.
    pub fn abandon(&mut self, ctx: &mut AgentContext<'_>, correlation: &CorrelationId) -> bool {
        match self.pending.remove(correlation) {
            Some(mut req) => {
                if let Some(sub) = req.subscription.take() {
                    let _ = ctx.unsubscribe(sub);
                }
                true
            }
            None => false,
        }
    }

    /// Drops finished entries to bound memory in long runs.
    pub fn prune(&mut self) {
        self.pending
            .retain(|_, p| p.state == RequestState::InFlight);
    }
}

/// A decoded request as seen by a service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceRequest {
    pub client: AgentId,
    pub reply_topic: TopicName,
    pub correlation: CorrelationId,
    pub body: Vec<u8>,
}

impl ServiceRequest {
    pub fn parse(msg: &Message) -> Result<Self, EnvelopeError> {
        let env = RequestEnvelope::decode(&msg.payload)?;
        if env.reply_topic.is_empty() {
            return Err(EnvelopeError::MissingReplyTopic);
        }
        if env.correlation.is_empty() {
            return Err(EnvelopeError::MissingCorrelation);
        }
        let reply_topic =
            TopicName::new(&env.reply_topic).map_err(|source| EnvelopeError::InvalidField {
                field: "reply topic",
                source,
            })?;
        let correlation =
            CorrelationId::new(&env.correlation).map_err(|source| EnvelopeError::InvalidField {
                field: "correlation",
                source,
            })?;
        Ok(Self {
            client: msg.sender.clone(),
            reply_topic,
            correlation,
            body: env.body,
        })
    }

    pub fn responder(&self, service: AgentId) -> ResponseLogistic {
        ResponseLogistic {
            reply_topic: self.reply_topic.clone(),
            correlation: self.correlation.clone(),
            service,
        }
    }
}

/// Response path for one request; publishes only to the request's reply topic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseLogistic {
    pub reply_topic: TopicName,
    pub correlation: CorrelationId,
    pub service: AgentId,
}

impl ResponseLogistic {
    pub fn respond(
        &self,
        ctx: &mut AgentContext<'_>,
        body: impl Into<Arc<[u8]>>,
    ) -> Result<(), BrokerError> {
        ctx.publish(
            self.reply_topic.clone(),
            body,
            Some(self.correlation.clone()),
        )
    }
}

/// Parses `msg` and answers it with `handler`'s output. Malformed requests
/// are logged and produce no publish.
pub fn serve<F>(ctx: &mut AgentContext<'_>, msg: &Message, handler: F) -> Result<(), LogisticsError>
where
    F: FnOnce(&mut AgentContext<'_>, &ServiceRequest) -> Vec<u8>,
{
    let req = match ServiceRequest::parse(msg) {
        Ok(r) => r,
        Err(e) => {
            record_malformed(ctx, msg, &e);
            return Err(e.into());
        }
    };
    let body = handler(ctx, &req);
    req.responder(ctx.id().clone()).respond(ctx, body)?;
    ctx.record(
        EventRecord::new(ctx.now(), EventKind::Served, ctx.id().as_str())
            .topic(req.reply_topic.as_str())
            .detail(
                json!({ "client": req.client.as_str(), "correlation": req.correlation.as_str() }),
            ),
    );
    Ok(())
}

pub fn record_malformed(ctx: &mut AgentContext<'_>, msg: &Message, err: &EnvelopeError) {
    ctx.record(
        EventRecord::new(ctx.now(), EventKind::MalformedRequest, ctx.id().as_str())
            .topic(msg.topic.as_str())
            .detail(json!({ "from": msg.sender.as_str(), "error": err.to_string() })),
    );
}
