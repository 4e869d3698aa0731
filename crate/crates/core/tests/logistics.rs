use std::collections::BTreeMap;

use agentflow::agent::{AgentBehavior, AgentContext, Runtime};
use agentflow::ids::{AgentId, CorrelationId};
use agentflow::log::{EventKind, LogLevel};
use agentflow::logistics::{
    make_reply_topic, parse_reply_topic, serve, ClientLogistics, RequestEnvelope, RequestOutcome,
    RequestState, RetryPolicy,
};
use agentflow::messaging::{Message, NetworkModel, TopicFilter, TopicName};

fn aid(s: &str) -> AgentId {
    AgentId::new(s).unwrap()
}

fn svc_topic() -> TopicName {
    TopicName::new("svc/req").unwrap()
}

/// Sends `requests` requests on start and keeps every outcome.
struct Client {
    requests: usize,
    policy: RetryPolicy,
    logistics: ClientLogistics,
    sent: Vec<CorrelationId>,
    outcomes: Vec<RequestOutcome>,
}

impl Client {
    fn new(requests: usize, policy: RetryPolicy) -> Self {
        Self {
            requests,
            policy,
            logistics: ClientLogistics::new(),
            sent: Vec::new(),
            outcomes: Vec::new(),
        }
    }
}

impl AgentBehavior for Client {
    fn on_start(&mut self, ctx: &mut AgentContext<'_>) {
        for i in 0..self.requests {
            let body = format!("{}:{i}", ctx.id());
            let k = self
                .logistics
                .send_request(ctx, svc_topic(), body.as_bytes(), self.policy)
                .unwrap();
            self.sent.push(k);
        }
    }

    fn on_message(&mut self, ctx: &mut AgentContext<'_>, msg: &Message) {
        if let Some(o) = self.logistics.handle_response(ctx, msg) {
            self.outcomes.push(o);
        }
    }

    fn on_timer(&mut self, ctx: &mut AgentContext<'_>, key: u64) {
        if key == ClientLogistics::TIMER_KEY {
            let out = self.logistics.on_tick(ctx);
            self.outcomes.extend(out);
        }
    }
}

/// Echoes the request body back, optionally twice.
struct Echo {
    repeat: usize,
}

impl AgentBehavior for Echo {
    fn on_start(&mut self, ctx: &mut AgentContext<'_>) {
        ctx.subscribe(&TopicFilter::from(svc_topic())).unwrap();
    }

    fn on_message(&mut self, ctx: &mut AgentContext<'_>, msg: &Message) {
        for _ in 0..self.repeat {
            let _ = serve(ctx, msg, |_, req| req.body.clone());
        }
    }
}

fn runtime(network: NetworkModel, seed: u64) -> Runtime {
    Runtime::new(network, seed, LogLevel::Full).unwrap()
}

fn client<'a>(rt: &'a Runtime, id: &str) -> &'a Client {
    rt.behavior::<Client>(&aid(id)).unwrap()
}

fn publishes_on<'a>(
    rt: &'a Runtime,
    topic: &'a str,
) -> impl Iterator<Item = &'a agentflow::log::EventRecord> + 'a {
    rt.log()
        .records()
        .iter()
        .filter(move |r| r.kind == EventKind::Publish && r.topic.as_deref() == Some(topic))
}

#[test]
fn send_publishes_once_with_embedded_reply_topic() {
    let mut rt = runtime(NetworkModel::lossless(1, 1), 1);
    rt.spawn(
        aid("c1"),
        Box::new(Client::new(1, RetryPolicy::default())),
        None,
    )
    .unwrap();
    assert_eq!(publishes_on(&rt, "svc/req").count(), 1);
    let req = client(&rt, "c1")
        .logistics
        .requests()
        .next()
        .unwrap()
        .clone();
    assert_eq!(req.state, RequestState::InFlight);
    assert_eq!(req.deadline, 100);
    assert_eq!(req.reply_topic().as_str(), "reply/c1/k0");
    assert_eq!(rt.broker().subscriptions_of(&aid("c1")).len(), 1);
}

#[test]
fn concurrent_requests_get_distinct_reply_topics() {
    let mut rt = runtime(NetworkModel::lossless(1, 1), 1);
    rt.spawn(
        aid("c1"),
        Box::new(Client::new(2, RetryPolicy::default())),
        None,
    )
    .unwrap();
    let topics: Vec<_> = client(&rt, "c1")
        .logistics
        .requests()
        .map(|p| p.reply_topic().clone())
        .collect();
    assert_eq!(topics.len(), 2);
    assert_ne!(topics[0], topics[1]);
}

/// Every delivery on a reply topic must reach the client named in it, and
/// every client must get exactly its own body back.
fn audit_selectivity(rt: &Runtime, clients: &[String]) {
    let mut per_client: BTreeMap<&str, usize> = BTreeMap::new();
    for r in rt.log().records() {
        if r.kind != EventKind::Deliver {
            continue;
        }
        let Some((owner, _)) = r.topic.as_deref().and_then(parse_reply_topic) else {
            continue;
        };
        assert_eq!(
            owner, r.agent,
            "response on {:?} reached {}",
            r.topic, r.agent
        );
        *per_client.entry(owner).or_default() += 1;
    }
    for c in clients {
        assert_eq!(per_client.get(c.as_str()), Some(&1), "client {c}");
        let cl = client(rt, c);
        match &cl.outcomes[..] {
            [RequestOutcome::Succeeded {
                body, correlation, ..
            }] => {
                assert_eq!(body, format!("{c}:0").as_bytes());
                assert_eq!(correlation, &cl.sent[0]);
            }
            other => panic!("{c}: {other:?}"),
        }
    }
}

#[test]
fn hundred_clients_one_service_no_cross_delivery() {
    for seed in 0..5 {
        let mut rt = runtime(NetworkModel::default(), seed);
        rt.spawn(aid("svc"), Box::new(Echo { repeat: 1 }), None)
            .unwrap();
        let ids: Vec<String> = (0..100).map(|i| format!("c{i:03}")).collect();
        for id in &ids {
            rt.spawn(
                aid(id),
                Box::new(Client::new(1, RetryPolicy::default())),
                None,
            )
            .unwrap();
        }
        rt.run_until(1_000);
        audit_selectivity(&rt, &ids);
        // No reply subscriptions survive completion.
        for id in &ids {
            assert!(rt.broker().subscriptions_of(&aid(id)).is_empty());
        }
    }
}

#[test]
fn serve_answers_only_on_the_reply_topic() {
    let mut rt = runtime(NetworkModel::lossless(1, 1), 1);
    rt.spawn(aid("svc"), Box::new(Echo { repeat: 1 }), None)
        .unwrap();
    // Hand-built request with reply topic reply/c1/k1.
    let env = RequestEnvelope::new(
        &make_reply_topic(&aid("c1"), &CorrelationId::new("k1").unwrap()),
        &CorrelationId::new("k1").unwrap(),
        b"x".to_vec(),
    );
    rt.publish_as(&aid("c1"), svc_topic(), env.encode().unwrap(), None)
        .unwrap();
    rt.run_until(10);
    let outs: Vec<_> = rt
        .log()
        .records()
        .iter()
        .filter(|r| r.kind == EventKind::Publish && r.agent == "svc")
        .collect();
    assert_eq!(outs.len(), 1);
    assert_eq!(outs[0].topic.as_deref(), Some("reply/c1/k1"));
}

#[test]
fn malformed_request_is_counted_and_unanswered() {
    let mut rt = runtime(NetworkModel::lossless(1, 1), 1);
    rt.spawn(aid("svc"), Box::new(Echo { repeat: 1 }), None)
        .unwrap();
    let env = RequestEnvelope {
        reply_topic: "reply/c1/k1".into(),
        correlation: String::new(),
        body: vec![],
    };
    rt.publish_as(&aid("c1"), svc_topic(), env.encode().unwrap(), None)
        .unwrap();
    rt.run_until(10);
    let kinds: Vec<_> = rt.log().records().iter().map(|r| r.kind).collect();
    assert!(kinds.contains(&EventKind::MalformedRequest));
    assert!(!rt
        .log()
        .records()
        .iter()
        .any(|r| r.kind == EventKind::Publish && r.agent == "svc"));
}

#[test]
fn no_retries_times_out_at_first_deadline() {
    let mut rt = runtime(NetworkModel::lossless(1, 1), 1);
    let policy = RetryPolicy {
        timeout_ticks: 10,
        max_retries: 0,
        backoff_ticks: 0,
    };
    rt.spawn(aid("c1"), Box::new(Client::new(1, policy)), None)
        .unwrap();
    rt.run_until(100);
    let timeouts: Vec<_> = rt
        .log()
        .records()
        .iter()
        .filter(|r| r.kind == EventKind::RequestTimedOut)
        .collect();
    assert_eq!(timeouts.len(), 1);
    assert_eq!(timeouts[0].tick, 10);
    assert!(rt.broker().subscriptions_of(&aid("c1")).is_empty());
}

#[test]
fn total_loss_makes_exactly_three_attempts() {
    let mut rt = runtime(
        NetworkModel {
            drop_probability: 1.0,
            ..NetworkModel::default()
        },
        3,
    );
    rt.spawn(aid("svc"), Box::new(Echo { repeat: 1 }), None)
        .unwrap();
    let policy = RetryPolicy {
        timeout_ticks: 10,
        max_retries: 2,
        backoff_ticks: 5,
    };
    rt.spawn(aid("c1"), Box::new(Client::new(1, policy)), None)
        .unwrap();
    rt.run_until(1_000);
    assert_eq!(publishes_on(&rt, "svc/req").count(), 3);
    let c = client(&rt, "c1");
    assert!(matches!(
        c.outcomes[..],
        [RequestOutcome::TimedOut { attempts: 3, .. }]
    ));
    // Deadlines: 10, then 10 + 10 + 5*1 = 25, then 25 + 10 + 5*2 = 45.
    let retry_ticks: Vec<_> = rt
        .log()
        .records()
        .iter()
        .filter(|r| matches!(r.kind, EventKind::RequestRetry | EventKind::RequestTimedOut))
        .map(|r| r.tick)
        .collect();
    assert_eq!(retry_ticks, [10, 25, 45]);
}

#[test]
fn loss_on_first_attempt_only_succeeds_on_second() {
    let mut rt = runtime(NetworkModel::lossless(1, 3), 4);
    rt.broker()
        .drop_next(TopicFilter::new("svc/req").unwrap(), 1);
    rt.spawn(aid("svc"), Box::new(Echo { repeat: 1 }), None)
        .unwrap();
    let policy = RetryPolicy {
        timeout_ticks: 10,
        max_retries: 2,
        backoff_ticks: 0,
    };
    rt.spawn(aid("c1"), Box::new(Client::new(1, policy)), None)
        .unwrap();
    rt.run_until(1_000);
    let c = client(&rt, "c1");
    assert!(matches!(
        c.outcomes[..],
        [RequestOutcome::Succeeded { attempts: 2, .. }]
    ));
    assert_eq!(c.logistics.requests().next().unwrap().attempts_used, 2);
}

#[test]
fn duplicate_responses_complete_once() {
    let mut rt = runtime(NetworkModel::lossless(1, 1), 1);
    rt.spawn(aid("svc"), Box::new(Echo { repeat: 2 }), None)
        .unwrap();
    rt.spawn(
        aid("c1"),
        Box::new(Client::new(1, RetryPolicy::default())),
        None,
    )
    .unwrap();
    rt.run_until(1_000);
    assert_eq!(client(&rt, "c1").outcomes.len(), 1);
    // Both responses were scheduled before the unsubscribe, so the second
    // still arrives and is recognized as a duplicate.
    let dups = rt
        .log()
        .records()
        .iter()
        .filter(|r| r.kind == EventKind::DuplicateResponse)
        .count();
    assert_eq!(dups, 1);
}
