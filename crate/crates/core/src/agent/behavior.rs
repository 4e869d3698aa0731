use std::any::Any;

use crate::agent::AgentContext;
use crate::messaging::Message;
use crate::Tick;

/// Hooks an agent implements. All effects on the world go through the
/// [`AgentContext`]; the runtime never calls two hooks of the same agent
/// concurrently.
pub trait AgentBehavior: Any + Send {
    fn on_start(&mut self, ctx: &mut AgentContext<'_>) {
        let _ = ctx;
    }

    fn on_message(&mut self, ctx: &mut AgentContext<'_>, msg: &Message);

    fn on_timer(&mut self, ctx: &mut AgentContext<'_>, key: u64) {
        let _ = (ctx, key);
    }

    fn on_stop(&mut self, ctx: &mut AgentContext<'_>) {
        let _ = ctx;
    }

    /// Payload piggybacked on runtime-emitted heartbeats sent at `now`.
    fn heartbeat_payload(&self, now: Tick) -> Vec<u8> {
        let _ = now;
        Vec::new()
    }
}
