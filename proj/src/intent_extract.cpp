#include "mobcast/intent_extract.hpp"

#include "mobcast/time_util.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <cctype>
#include <chrono>
#include <fstream>
#include <thread>

namespace mobcast {

const char* const kSystemPrompt =
    "You are an AI that notifies affected users and makes suggestions to change their mobility "
    "based on news text.";

const char* const kPromptIdentifyEvents =
    "First, identify the most influential events in the news content, including scheduled and "
    "unpredictable events.";

const char* const kPromptEventTime =
    "Next, estimate the exact time of the most important event mentioned in the news in the "
    "following JSON format: \"event time\": \"yyyy-mm-dd hh:mm:ss\". If the exact time is "
    "unknown, use the news release time. Provide only the JSON string without any additional "
    "text or explanations.";

const char* const kPrompt3W1H =
    "Based on the news text and our chat, evaluate the 3W1H related to human mobility.\n"
    "- Where: Where should people move if necessary?\n"
    "- Who: What kind of people will be affected?\n"
    "- When: When did the event happen?\n"
    "- How: How should people move if necessary?";

const char* const kPromptPredictability =
    "Is the content in the news more like an unpredictable event, such as an earthquake? Your "
    "answer can only be \"Yes\" or \"No\".";

const char* const kPromptIntentions =
    "Background: Most news related to economic, politics, culture, and history issues usually "
    "have no effect on human mobility because they do not relate to people's daily life.\n"
    "- Slight disasters, such as light earthquakes and tsunamis, or some local events (like "
    "political events) may also have no effect on human mobility in Japan.\n"
    "- Only events that happened close to the release time (within several hours) may have an "
    "influence on human mobility.\n"
    "Task: Score the news text based on the following aspects (0-100, where a higher number "
    "means higher agreement):\n"
    "Q1. To what extent do the events described in the news make people leave the area because "
    "they are dangerous?\n"
    "Q2. To what extent do the events described in the news make people stay in the area "
    "because it is better not to move?\n"
    "Q3. To what extent do the events described in the news make people visit the area because "
    "they are interesting events?\n"
    "Q4. To what extent do the events described in the news make people keep their daily "
    "routine as these events are not important to daily life?\n"
    "Q5. To what extent do the events described in the news lead to interruption of economic "
    "activities, such as business closures or work stoppages?\n"
    "Q6. To what extent do the events described in the news affect transportation conditions, "
    "such as traffic congestion or road closures?\n"
    "Q7. To what extent do the events described in the news impact public health and safety, "
    "leading to decisions to leave or avoid certain areas?\n"
    "Q8. To what extent do the events described in the news involve government or official "
    "instructions that influence people's movements?\n"
    "Q9. To what extent do the events described in the news affect the availability of public "
    "services, such as school closures or interruptions in medical services?\n"
    "Q10. To what extent do the events described in the news last a long time (like one day)?\n"
    "Expected response: A list of 10 numbers between 0 and 100.";

const char* const kStructuredBlockOpen = "[structured-summary]";
const char* const kStructuredBlockClose = "[/structured-summary]";

namespace {

// All balanced top-level {...} spans in the text.
std::vector<std::string> json_object_spans(const std::string& text) {
    std::vector<std::string> spans;
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '{') {
            int depth = 0;
            std::size_t j = i;
            for (; j < text.size(); ++j) {
                if (text[j] == '{')
                    ++depth;
                else if (text[j] == '}') {
                    --depth;
                    if (depth == 0)
                        break;
                }
            }
            if (j < text.size()) {
                spans.push_back(text.substr(i, j - i + 1));
                i = j + 1;
                continue;
            }
        }
        ++i;
    }
    return spans;
}

}  // namespace

std::optional<std::int64_t> try_parse_event_time(const std::string& answer_text) {
    // Tolerate a bare `"event time": "..."` pair without braces.
    std::string text = answer_text;
    if (text.find('{') == std::string::npos && text.find("event time") != std::string::npos)
        text = "{" + text + "}";

    std::vector<nlohmann::json> parsed;
    for (const std::string& span : json_object_spans(text)) {
        nlohmann::json j = nlohmann::json::parse(span, nullptr, false);
        if (!j.is_discarded() && j.is_object())
            parsed.push_back(std::move(j));
    }
    if (parsed.size() != 1)
        return std::nullopt;
    if (!parsed[0].contains("event time") || !parsed[0]["event time"].is_string())
        return std::nullopt;
    std::int64_t ts;
    if (!parse_datetime(parsed[0]["event time"].get<std::string>(), ts))
        return std::nullopt;
    return ts;
}

std::int64_t parse_event_time(const std::string& answer_text, std::int64_t release_time) {
    const auto parsed = try_parse_event_time(answer_text);
    return parsed ? *parsed : release_time;
}

std::optional<bool> parse_predictability(const std::string& answer_text) {
    std::size_t i = 0;
    while (i < answer_text.size() && !std::isalpha(static_cast<unsigned char>(answer_text[i])))
        ++i;
    std::string token;
    while (i < answer_text.size() && std::isalpha(static_cast<unsigned char>(answer_text[i])))
        token.push_back(static_cast<char>(
            std::tolower(static_cast<unsigned char>(answer_text[i++]))));
    if (token == "yes")
        return false;  // "Yes" = unpredictable
    if (token == "no")
        return true;
    return std::nullopt;
}

std::optional<IntentionVector> parse_intentions(const std::string& answer_text) {
    const std::size_t open = answer_text.find('[');
    if (open == std::string::npos)
        return std::nullopt;
    const std::size_t close = answer_text.find(']', open);
    if (close == std::string::npos)
        return std::nullopt;
    const std::string body = answer_text.substr(open + 1, close - open - 1);

    std::vector<int> values;
    std::size_t i = 0;
    while (i < body.size()) {
        while (i < body.size() &&
               (std::isspace(static_cast<unsigned char>(body[i])) || body[i] == ','))
            ++i;
        if (i >= body.size())
            break;
        bool neg = false;
        if (body[i] == '-') {
            neg = true;
            ++i;
        }
        if (i >= body.size() || !std::isdigit(static_cast<unsigned char>(body[i])))
            return std::nullopt;
        long v = 0;
        while (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i]))) {
            v = v * 10 + (body[i] - '0');
            if (v > 100000)
                return std::nullopt;
            ++i;
        }
        values.push_back(static_cast<int>(neg ? -v : v));
    }
    if (values.size() != kIntentionDim)
        return std::nullopt;
    IntentionVector iv;
    for (int k = 0; k < kIntentionDim; ++k)
        iv.q[static_cast<std::size_t>(k)] = values[static_cast<std::size_t>(k)];
    if (!iv.in_range())
        return std::nullopt;
    return iv;
}

namespace {

std::string transcript_of(const PromptChainState& state) {
    std::string out;
    for (const ChatMessage& m : state.messages) {
        out += m.role;
        out += ": ";
        out += m.content;
        out += "\n---\n";
    }
    return out;
}

// Asks the current step, retrying on transport errors and on answers the
// acceptor rejects. Accepted answers are appended to the history.
std::optional<std::string> ask_step(PromptChainState& state, const ChatFn& chat,
                                    const std::string& prompt, int max_retries,
                                    const std::function<bool(const std::string&)>& accept) {
    state.messages.push_back({"user", prompt});
    std::string last_answer;
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        std::string answer;
        try {
            answer = chat(state.messages);
        } catch (const IoError&) {
            if (attempt == max_retries)
                return std::nullopt;
            std::this_thread::sleep_for(std::chrono::milliseconds(100 * (attempt + 1)));
            continue;
        }
        last_answer = answer;
        if (accept(answer)) {
            state.messages.push_back({"assistant", answer});
            state.step += 1;
            return answer;
        }
    }
    // keep the rejected answer in the transcript for the audit trail
    state.messages.push_back({"assistant", last_answer});
    return std::nullopt;
}

}  // namespace

EventRecord run_prompt_chain(const Article& article, const ChatFn& chat, int max_retries) {
    if (article.text.empty())
        throw ValidationError("run_prompt_chain: empty article text");

    EventRecord record;
    record.article_id = article.article_id;
    record.region_codes = article.region_codes;
    record.category_label = article.category_label;
    if (!parse_datetime(article.release_time, record.release_time))
        throw ValidationError("run_prompt_chain: bad release_time '" + article.release_time +
                              "'");

    PromptChainState state;
    state.messages.push_back({"system", kSystemPrompt});

    auto non_empty = [](const std::string& s) { return !s.empty(); };

    const std::string step1 = std::string(kPromptIdentifyEvents) +
                              "\n\nNews release time: " + article.release_time +
                              "\nNews text:\n" + article.text;
    const auto answer1 = ask_step(state, chat, step1, max_retries, non_empty);
    if (!answer1) {
        record.valid = false;
        record.raw_transcript = transcript_of(state);
        return record;
    }
    record.answer_events = *answer1;

    const auto answer2 = ask_step(state, chat, kPromptEventTime, max_retries,
                                  [](const std::string& s) {
                                      return try_parse_event_time(s).has_value();
                                  });
    record.corrected_event_time =
        answer2 ? *try_parse_event_time(*answer2) : record.release_time;
    if (!answer2) {
        // the fallback is defined; the chain continues
        state.step += 1;
    }

    const auto answer3 = ask_step(state, chat, kPrompt3W1H, max_retries, non_empty);
    if (!answer3) {
        record.valid = false;
        record.raw_transcript = transcript_of(state);
        return record;
    }
    record.answer_3w1h = *answer3;

    const auto answer4 = ask_step(state, chat, kPromptPredictability, max_retries,
                                  [](const std::string& s) {
                                      return parse_predictability(s).has_value();
                                  });
    if (!answer4) {
        record.valid = false;
        record.raw_transcript = transcript_of(state);
        return record;
    }
    record.predictable = *parse_predictability(*answer4);

    const auto answer5 = ask_step(state, chat, kPromptIntentions, max_retries,
                                  [](const std::string& s) {
                                      return parse_intentions(s).has_value();
                                  });
    if (!answer5) {
        record.valid = false;
        record.raw_transcript = transcript_of(state);
        return record;
    }
    record.intentions = *parse_intentions(*answer5);
    record.valid = true;
    return record;
}

namespace {

// "http://host:port" -> (host, port); https is not supported by the local
// runners this targets.
std::pair<std::string, int> parse_base_url(const std::string& url) {
    std::string rest = url;
    const std::string http = "http://";
    if (rest.rfind("https://", 0) == 0)
        throw ValidationError("endpoint: https is not supported, use a local http runner");
    if (rest.rfind(http, 0) == 0)
        rest = rest.substr(http.size());
    while (!rest.empty() && rest.back() == '/')
        rest.pop_back();
    const std::size_t colon = rest.find(':');
    if (colon == std::string::npos)
        return {rest, 80};
    return {rest.substr(0, colon), std::stoi(rest.substr(colon + 1))};
}

}  // namespace

EventRecord run_prompt_chain_http(const Article& article, const LlmEndpointConfig& endpoint) {
    const auto [host, port] = parse_base_url(endpoint.base_url);
    ChatFn chat = [&, host = host, port = port](const std::vector<ChatMessage>& messages) {
        httplib::Client client(host, port);
        client.set_connection_timeout(endpoint.timeout_seconds);
        client.set_read_timeout(endpoint.timeout_seconds);

        nlohmann::json req;
        req["model"] = endpoint.model;
        req["temperature"] = endpoint.temperature;
        req["stream"] = false;
        req["messages"] = nlohmann::json::array();
        for (const ChatMessage& m : messages)
            req["messages"].push_back({{"role", m.role}, {"content", m.content}});

        auto result = client.Post("/v1/chat/completions", req.dump(), "application/json");
        if (!result)
            throw IoError("chat endpoint unreachable: " + endpoint.base_url);
        if (result->status == 429 || result->status >= 500)
            throw IoError("chat endpoint returned status " + std::to_string(result->status));
        if (result->status != 200)
            throw ValidationError("chat endpoint rejected request, status " +
                                  std::to_string(result->status));
        nlohmann::json j = nlohmann::json::parse(result->body, nullptr, false);
        if (j.is_discarded() || !j.contains("choices") || j["choices"].empty())
            throw IoError("chat endpoint returned malformed body");
        return j["choices"][0]["message"]["content"].get<std::string>();
    };
    return run_prompt_chain(article, chat, endpoint.max_retries);
}

EventRecord mock_extract(const Article& article) {
    EventRecord record;
    record.article_id = article.article_id;
    record.region_codes = article.region_codes;
    record.category_label = article.category_label;
    if (!parse_datetime(article.release_time, record.release_time))
        throw ValidationError("mock_extract: bad release_time '" + article.release_time + "'");

    const std::size_t open = article.text.find(kStructuredBlockOpen);
    const std::size_t close = article.text.find(kStructuredBlockClose);
    if (open == std::string::npos || close == std::string::npos || close <= open) {
        record.valid = false;
        record.raw_transcript = article.text;
        return record;
    }
    const std::size_t body_begin = open + std::string(kStructuredBlockOpen).size();
    const std::string body = article.text.substr(body_begin, close - body_begin);
    nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("event_time") ||
        !j.contains("predictable") || !j.contains("intentions")) {
        record.valid = false;
        record.raw_transcript = article.text;
        return record;
    }
    if (!parse_datetime(j["event_time"].get<std::string>(), record.corrected_event_time)) {
        record.valid = false;
        record.raw_transcript = article.text;
        return record;
    }
    record.predictable = j["predictable"].get<bool>();
    if (!j["intentions"].is_array() || j["intentions"].size() != kIntentionDim) {
        record.valid = false;
        record.raw_transcript = article.text;
        return record;
    }
    for (int i = 0; i < kIntentionDim; ++i)
        record.intentions.q[static_cast<std::size_t>(i)] = j["intentions"][i].get<int>();
    if (!record.intentions.in_range()) {
        record.valid = false;
        record.raw_transcript = article.text;
        return record;
    }
    record.answer_events = article.text.substr(0, article.text.find('\n'));
    record.answer_3w1h = "Where: " + (article.region_codes.empty() ? std::string("n/a")
                                                                   : article.region_codes[0]) +
                         "; Who: local residents and visitors; When: " +
                         format_datetime(record.corrected_event_time) +
                         "; How: follow local guidance.";
    record.valid = true;
    return record;
}

std::string quadrant_code(Quadrant q) {
    switch (q) {
        case Quadrant::PositivePredictable: return "PP";
        case Quadrant::PositiveUnpredictable: return "PU";
        case Quadrant::NegativePredictable: return "NP";
        case Quadrant::NegativeUnpredictable: return "NU";
    }
    return "PP";
}

Quadrant categorize_scores(const IntentionVector& intentions, bool predictable) {
    const int danger = intentions.q[0];
    const int interest = intentions.q[2];
    const bool positive = interest >= danger;  // tie counts as positive
    if (positive)
        return predictable ? Quadrant::PositivePredictable : Quadrant::PositiveUnpredictable;
    return predictable ? Quadrant::NegativePredictable : Quadrant::NegativeUnpredictable;
}

Quadrant categorize_event(const EventRecord& record) {
    if (!record.valid)
        throw ValidationError("categorize_event: record is invalid");
    return categorize_scores(record.intentions, record.predictable);
}

std::vector<Article> load_articles(const std::string& path) {
    std::ifstream is(path);
    if (!is)
        throw IoError("cannot open " + path);
    std::vector<Article> articles;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty())
            continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw ValidationError(path + ":" + std::to_string(line_no) + ": invalid JSON");
        Article a;
        a.article_id = j.value("article_id", std::string{});
        a.release_time = j.value("release_time", std::string{});
        a.category_label = j.value("category_label", std::string{});
        if (j.contains("region_codes"))
            for (const auto& code : j["region_codes"])
                a.region_codes.push_back(code.get<std::string>());
        a.text = j.value("text", std::string{});
        articles.push_back(std::move(a));
    }
    return articles;
}

void write_events(const std::string& path, const std::vector<EventRecord>& records) {
    std::ofstream os(path, std::ios::trunc);
    if (!os)
        throw IoError("cannot open " + path + " for writing");
    for (const EventRecord& e : records) {
        nlohmann::json j;
        j["article_id"] = e.article_id;
        j["valid"] = e.valid;
        j["release_time"] = format_datetime(e.release_time);
        if (e.valid) {
            j["event_time"] = format_datetime(e.corrected_event_time);
            j["region_codes"] = e.region_codes;
            j["category_label"] = e.category_label;
            j["predictable"] = e.predictable;
            j["intentions"] = e.intentions.q;
            j["answers"] = {{"events", e.answer_events}, {"w3h1", e.answer_3w1h}};
        } else {
            j["raw_transcript"] = e.raw_transcript;
        }
        os << j.dump() << "\n";
    }
}

std::vector<EventRecord> extract_articles(const std::vector<Article>& articles,
                                          const ExtractOptions& options) {
    std::vector<const Article*> kept;
    for (const Article& a : articles) {
        bool denied = false;
        for (const std::string& keyword : options.keyword_denylist)
            if (!keyword.empty() && a.text.find(keyword) != std::string::npos) {
                denied = true;
                break;
            }
        if (!denied)
            kept.push_back(&a);
    }

    std::vector<EventRecord> records(kept.size());
    if (options.mock) {
        for (std::size_t i = 0; i < kept.size(); ++i)
            records[i] = mock_extract(*kept[i]);
        return records;
    }

    const int workers =
        std::max(1, std::min<int>(options.endpoint.max_concurrent,
                                  static_cast<int>(kept.size())));
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= kept.size())
                    return;
                try {
                    records[i] = run_prompt_chain_http(*kept[i], options.endpoint);
                } catch (const Error& err) {
                    records[i].article_id = kept[i]->article_id;
                    records[i].valid = false;
                    records[i].raw_transcript = err.what();
                }
            }
        });
    }
    for (std::thread& t : pool)
        t.join();
    return records;
}

}  // namespace mobcast
