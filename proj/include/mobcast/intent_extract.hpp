#pragma once

#include "mobcast/data_model.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mobcast {

// ---------------------------------------------------------------------------
// Five-step dialog protocol: identify events, pin the event time, reason about
// where/who/when/how, judge predictability, then score ten intention aspects.

extern const char* const kSystemPrompt;
extern const char* const kPromptIdentifyEvents;
extern const char* const kPromptEventTime;
extern const char* const kPrompt3W1H;
extern const char* const kPromptPredictability;
extern const char* const kPromptIntentions;

struct ChatMessage {
    std::string role;  // "system" | "user" | "assistant"
    std::string content;
};

// Ordered history plus the current step (1-5). Steps run strictly in order
// and every prior answer stays in the history.
struct PromptChainState {
    std::vector<ChatMessage> messages;
    int step = 1;
};

struct LlmEndpointConfig {
    std::string base_url = "http://localhost:11434";
    std::string model = "llama3:70b";
    double temperature = 0.0;
    int timeout_seconds = 120;
    int max_retries = 3;
    int max_concurrent = 4;
};

// One article as it arrives from upstream: region codes and the agency
// category label ride along with the text.
struct Article {
    std::string article_id;
    std::string release_time;  // "yyyy-mm-dd hh:mm:ss"
    std::vector<std::string> region_codes;
    std::string category_label;
    std::string text;
};

// ---------------------------------------------------------------------------
// Answer parsers. Total functions: every input yields a value, a retryable
// failure (nullopt) or the documented fallback; never an exception.

// Extracts {"event time": "yyyy-mm-dd hh:mm:ss"} from the answer; tolerates
// prose around a single JSON object. Absent or invalid -> release_time.
std::int64_t parse_event_time(const std::string& answer_text, std::int64_t release_time);

// Strict variant used inside the retry loop: nullopt when no valid time found.
std::optional<std::int64_t> try_parse_event_time(const std::string& answer_text);

// Leading yes/no token, case-insensitive. "Yes" marks the event unpredictable,
// so the result is predictable = !yes. nullopt when neither token leads.
std::optional<bool> parse_predictability(const std::string& answer_text);

// First bracketed list of exactly ten integers, each within [0, 100].
// Out-of-range or wrong arity is a failure, never clamped.
std::optional<IntentionVector> parse_intentions(const std::string& answer_text);

// ---------------------------------------------------------------------------

// Transport abstraction: send a chat and return the first choice's content.
// Throws IoError on transport failure (retryable by the chain).
using ChatFn = std::function<std::string(const std::vector<ChatMessage>&)>;

// Runs the five-step chain over the given transport. Parse failures retry up
// to max_retries per step; exhausted retries mark the record invalid with the
// raw transcript preserved (except event time, which falls back to the
// release time).
EventRecord run_prompt_chain(const Article& article, const ChatFn& chat, int max_retries = 3);

// Same protocol over an HTTP chat-completions endpoint.
EventRecord run_prompt_chain_http(const Article& article, const LlmEndpointConfig& endpoint);

// ---------------------------------------------------------------------------
// Offline extractor: synthetic articles embed a structured block
//   [structured-summary] {json} [/structured-summary]
// which is parsed directly; articles without the marker yield invalid records.

extern const char* const kStructuredBlockOpen;
extern const char* const kStructuredBlockClose;

EventRecord mock_extract(const Article& article);

// ---------------------------------------------------------------------------
// Effect-sign x predictability quadrants; first letter from the interest vs
// danger scores (ties count as positive), second from predictability.

enum class Quadrant { PositivePredictable, PositiveUnpredictable, NegativePredictable,
                      NegativeUnpredictable };

std::string quadrant_code(Quadrant q);  // "PP" | "PU" | "NP" | "NU"

Quadrant categorize_scores(const IntentionVector& intentions, bool predictable);
Quadrant categorize_event(const EventRecord& record);

// ---------------------------------------------------------------------------
// Batch extraction over a JSONL article file. Articles whose text contains a
// denylisted keyword are skipped. Output order equals input order regardless
// of concurrency.

struct ExtractOptions {
    bool mock = false;
    LlmEndpointConfig endpoint;
    std::vector<std::string> keyword_denylist;  // ships empty
};

std::vector<Article> load_articles(const std::string& path);
void write_events(const std::string& path, const std::vector<EventRecord>& records);
std::vector<EventRecord> extract_articles(const std::vector<Article>& articles,
                                          const ExtractOptions& options);

}  // namespace mobcast
