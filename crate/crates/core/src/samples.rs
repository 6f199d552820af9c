//! Canned agent pools and router transcripts shared by tests, demos, and
//! documentation examples. All of it is plain data; nothing here touches a
//! real backend.

use crate::registry::AgentCard;

/// Three-agent pool for the "webpage loads very slowly" scenario: the query
/// legitimately spans network quality, CDN behavior, and edge acceleration.
pub fn web_latency_pool() -> Vec<AgentCard> {
    vec![
        AgentCard::new(
            "network_agent",
            "Network Quality Agent",
            "Analyze public and private network latency, packet loss, jitter, and network path quality.",
        ),
        AgentCard::new(
            "cdn_agent",
            "CDN Agent",
            "Examine CDN access latency, origin fetch behavior, cache hit rates, and content distribution policies.",
        ),
        AgentCard::new(
            "eo_agent",
            "EdgeOne Agent",
            "Investigate EdgeOne origin latency, edge node issues, and acceleration configuration problems.",
        ),
    ]
}

pub fn web_latency_query() -> &'static str {
    "What should I do if a webpage loads very slowly?"
}

/// Router completion selecting all three latency experts.
pub fn web_latency_completion() -> &'static str {
    "<Reason>\nThe user reports that \u{201c}the webpage loads very slowly,\u{201d} which requires \
diagnosis from both the network path and acceleration layers. The Network Agent can analyze \
public/private network latency, packet loss, jitter, and path quality. The CDN Agent can \
examine CDN access latency, origin fetch behavior, and distribution policies. If EdgeOne is \
being used, the EO Agent should investigate origin latency, edge node issues, and \
configuration problems.\n</Reason>\n\n<ID>network_agent</ID>\n\n<ID>cdn_agent</ID>\n\n<ID>eo_agent</ID>"
}

/// Two-agent message-queue pool with deliberately overlapping wording; the
/// confusable descriptions make it a good conflict fixture.
pub fn message_queue_pool() -> Vec<AgentCard> {
    vec![
        AgentCard::new(
            "ckafka_agent",
            "CKafka Message Queue Agent",
            "Query CKafka instance information and diagnose CKafka-related issues.",
        ),
        AgentCard::new(
            "rocketMQ_agent",
            "RocketMQ Message Queue Agent",
            "Analyze abnormal RocketMQ topic production rates and query configuration changes (scaling/reconfiguration).",
        ),
    ]
}

pub fn message_queue_query() -> &'static str {
    "Configuration change for CKafka message queue"
}

/// Router completion that picks the RocketMQ expert for the query above — a
/// plausible-looking wrong answer, useful for exercising the parse path with
/// realistic model output.
pub fn message_queue_completion() -> &'static str {
    "<Reason>\nThe user reports a \u{201c}message queue configuration change.\u{201d} The RocketMQ \
Message Queue Agent has the capability to handle configuration change queries and can \
effectively address the user\u{2019}s issue.\n</Reason>\n\n<ID>rocketMQ_agent</ID>"
}

/// Reference rendering of [`message_queue_pool`] as prompt `<Agent>` blocks,
/// with hand-wrapped description lines. Tag structure and text content match
/// the canonical renderer; interior whitespace differs.
pub fn message_queue_agent_listing() -> &'static str {
    "<Agent>\n    <Name>CKafka Message Queue Agent</Name>\n    <Description>\n        Query \
CKafka instance information and diagnose CKafka-related issues.</Description>\n    \
<ID>ckafka_agent</ID>\n</Agent>\n\n<Agent>\n    <Name>RocketMQ Message Queue Agent</Name>\n    \
<Description>\n        Analyze abnormal RocketMQ topic production rates and query configuration \
changes (scaling/reconfiguration).\n    </Description>\n    <ID>rocketMQ_agent</ID>\n</Agent>"
}
