#pragma once

// Collection of model completions for a prompt dataset, extraction of the
// summary text, and normalization into scoring rows.
//
// collect() is checkpointed: every completed record is appended (and flushed)
// to a JSONL checkpoint before the next request starts, so an interrupted run
// resumed over the same checkpoint issues zero duplicate requests and ends in
// byte-identical final artifacts. The checkpoint format is versioned by its
// header line.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <future>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "promptforge.hpp"
#include "util.hpp"

namespace icpl {

struct DecodingConfig {
    double temperature = 0.6;
    int top_k = 16;
    int max_tokens = 4096;
};

enum class ExtractionStatus { matched, fallback, failed };

inline std::string extraction_status_name(ExtractionStatus s) {
    switch (s) {
        case ExtractionStatus::matched: return "matched";
        case ExtractionStatus::fallback: return "fallback";
        case ExtractionStatus::failed: return "failed";
    }
    return "failed";
}

inline ExtractionStatus extraction_status_from_name(const std::string& s) {
    if (s == "matched") return ExtractionStatus::matched;
    if (s == "fallback") return ExtractionStatus::fallback;
    if (s == "failed") return ExtractionStatus::failed;
    throw std::invalid_argument("unknown extraction status: " + s);
}

struct GenerationRecord {
    std::string prompt_id;
    std::string model_id;
    std::string raw_completion;
    std::string extracted_summary;
    ExtractionStatus extraction_status = ExtractionStatus::failed;
    std::string reason;  // failure reason, empty otherwise
};

inline json generation_to_json(const GenerationRecord& r) {
    json j{{"prompt_id", r.prompt_id},
           {"model_id", r.model_id},
           {"raw_completion", r.raw_completion},
           {"extracted_summary", r.extracted_summary},
           {"extraction_status", extraction_status_name(r.extraction_status)}};
    if (!r.reason.empty()) j["reason"] = r.reason;
    return j;
}

inline GenerationRecord generation_from_json(const json& j) {
    GenerationRecord r;
    r.prompt_id = j.at("prompt_id");
    r.model_id = j.at("model_id");
    r.raw_completion = j.at("raw_completion");
    r.extracted_summary = j.at("extracted_summary");
    r.extraction_status = extraction_status_from_name(j.at("extraction_status"));
    r.reason = j.value("reason", "");
    return r;
}

// --- extraction --------------------------------------------------------------

// Completions answer with marker lines; contrastive prompts carry one marker
// per user ordinal. Markers are plain prefixes matched at line starts.
struct ExtractionPattern {
    std::string marker = "HEADLINE:";
    std::string user_marker = "HEADLINE User{n}:";  // {n} is the 1-based ordinal

    std::string marker_for(size_t ordinal) const {
        std::string m = user_marker;
        const std::string slot = "{n}";
        if (auto pos = m.find(slot); pos != std::string::npos)
            m.replace(pos, slot.size(), std::to_string(ordinal));
        return m;
    }
};

namespace detail {

inline std::pair<std::string, ExtractionStatus> extract_with_marker(std::string_view raw,
                                                                    const std::string& marker,
                                                                    size_t fallback_line) {
    if (trim(raw).empty()) return {"", ExtractionStatus::failed};
    std::vector<std::string> lines = split(std::string(raw), '\n');
    for (const std::string& line : lines) {
        std::string t = trim(line);
        if (t.size() >= marker.size() && t.compare(0, marker.size(), marker) == 0) {
            std::string rest = trim(t.substr(marker.size()));
            if (!rest.empty()) return {rest, ExtractionStatus::matched};
        }
    }
    size_t seen = 0;
    for (const std::string& line : lines) {
        std::string t = trim(line);
        if (t.empty()) continue;
        if (++seen == fallback_line) return {t, ExtractionStatus::fallback};
    }
    return {"", ExtractionStatus::failed};
}

}  // namespace detail

// Text after the first marker line; falls back to the first nonempty line.
inline std::pair<std::string, ExtractionStatus> extract_summary(std::string_view raw,
                                                                const ExtractionPattern& pattern = {}) {
    return detail::extract_with_marker(raw, pattern.marker, 1);
}

// Per-user extraction for contrastive completions; the fallback is the n-th
// nonempty line.
inline std::pair<std::string, ExtractionStatus> extract_summary_for_user(std::string_view raw, size_t ordinal,
                                                                         const ExtractionPattern& pattern = {}) {
    return detail::extract_with_marker(raw, pattern.marker_for(ordinal), ordinal);
}

// --- completion clients -------------------------------------------------------

struct CompletionRequest {
    std::string prompt_id;
    std::string model_id;
    std::string prompt;
    DecodingConfig decoding;
};

struct CompletionResult {
    bool ok = false;
    std::string text;
    std::string error;
    bool transient = false;  // retryable (connection failure, 5xx)
};

class CompletionClient {
public:
    virtual ~CompletionClient() = default;
    virtual CompletionResult complete(const CompletionRequest& req) = 0;
};

// Replays completions recorded as JSONL {prompt_id, model_id?, raw_completion}.
// complete() is safe to call from several collector workers at once.
class PlaybackClient : public CompletionClient {
public:
    PlaybackClient() = default;
    PlaybackClient(PlaybackClient&& other) noexcept
        : completions_(std::move(other.completions_)), calls_(other.calls_.load()) {}

    static PlaybackClient from_file(const std::string& path) {
        std::map<std::string, std::string> m;
        for (const json& j : read_jsonl(path))
            m[j.at("prompt_id").get<std::string>()] = j.at("raw_completion").get<std::string>();
        return PlaybackClient(std::move(m));
    }

    void add(const std::string& prompt_id, const std::string& raw) { completions_[prompt_id] = raw; }

    CompletionResult complete(const CompletionRequest& req) override {
        calls_.fetch_add(1, std::memory_order_relaxed);
        auto it = completions_.find(req.prompt_id);
        if (it == completions_.end())
            return {false, "", "no recorded completion for prompt_id '" + req.prompt_id + "'", false};
        return {true, it->second, "", false};
    }

    size_t calls() const { return calls_.load(); }

private:
    explicit PlaybackClient(std::map<std::string, std::string> m) : completions_(std::move(m)) {}

    std::map<std::string, std::string> completions_;
    std::atomic<size_t> calls_{0};
};

// --- collect --------------------------------------------------------------------

inline constexpr int checkpoint_version = 1;

struct CollectConfig {
    std::string model_id;
    DecodingConfig decoding;
    ExtractionPattern pattern;
    int max_retries = 3;         // attempts on transient failures
    double backoff_seconds = 0.05;  // doubles per retry
    size_t workers = 1;
    std::string checkpoint_path;    // empty disables checkpointing
    std::string audit_path;         // empty disables the request/response audit
};

struct CollectStats {
    size_t total = 0;
    size_t from_checkpoint = 0;
    size_t requested = 0;
    size_t matched = 0;
    size_t fallback = 0;
    size_t failed = 0;
    size_t retries = 0;
};

namespace detail {

inline std::string prompts_fingerprint(const std::vector<RenderedPrompt>& prompts) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const RenderedPrompt& p : prompts) h = fnv1a64(p.prompt_id, fnv1a64(p.text, h));
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace detail

// Collects one GenerationRecord per prompt, in prompt_id order. Bounded
// concurrency (cfg.workers) with a single writer; records land in the
// checkpoint in deterministic order regardless of worker count.
inline std::vector<GenerationRecord> collect(std::vector<RenderedPrompt> prompts, CompletionClient& client,
                                             const CollectConfig& cfg, CollectStats* stats_out = nullptr) {
    std::sort(prompts.begin(), prompts.end(),
              [](const RenderedPrompt& a, const RenderedPrompt& b) { return a.prompt_id < b.prompt_id; });
    for (size_t i = 1; i < prompts.size(); ++i)
        if (prompts[i].prompt_id == prompts[i - 1].prompt_id)
            throw std::runtime_error("duplicate prompt_id in dataset: " + prompts[i].prompt_id);

    CollectStats stats;
    stats.total = prompts.size();
    const std::string fingerprint = detail::prompts_fingerprint(prompts);

    std::map<std::string, GenerationRecord> done;
    if (!cfg.checkpoint_path.empty()) {
        std::ifstream in(cfg.checkpoint_path, std::ios::binary);
        if (in) {
            std::string line;
            size_t lineno = 0;
            while (std::getline(in, line)) {
                ++lineno;
                if (trim(line).empty()) continue;
                json j = json::parse(line);
                if (lineno == 1) {
                    if (j.value("checkpoint_version", -1) != checkpoint_version)
                        throw std::runtime_error("checkpoint version mismatch in " + cfg.checkpoint_path);
                    if (j.value("prompts", "") != fingerprint)
                        throw std::runtime_error("checkpoint was written for a different prompt dataset: " +
                                                 cfg.checkpoint_path);
                    if (j.value("model_id", "") != cfg.model_id)
                        throw std::runtime_error("checkpoint was written for model '" +
                                                 j.value("model_id", "") + "', not '" + cfg.model_id + "'");
                    continue;
                }
                GenerationRecord r = generation_from_json(j);
                done[r.prompt_id] = std::move(r);
            }
        }
    }

    std::ofstream ckpt;
    if (!cfg.checkpoint_path.empty()) {
        const bool fresh = done.empty();
        ckpt.open(cfg.checkpoint_path, fresh ? std::ios::binary | std::ios::trunc
                                             : std::ios::binary | std::ios::app);
        if (!ckpt) throw std::runtime_error("cannot write checkpoint: " + cfg.checkpoint_path);
        if (fresh) {
            ckpt << json{{"checkpoint_version", checkpoint_version},
                         {"prompts", fingerprint},
                         {"model_id", cfg.model_id}}
                        .dump()
                 << '\n';
            ckpt.flush();
        }
    }
    std::ofstream audit;
    if (!cfg.audit_path.empty()) {
        audit.open(cfg.audit_path, std::ios::binary | std::ios::trunc);
        if (!audit) throw std::runtime_error("cannot write audit log: " + cfg.audit_path);
    }

    auto run_one = [&](const RenderedPrompt& p, size_t* retry_count,
                       std::vector<json>* audit_rows) -> GenerationRecord {
        CompletionRequest req{p.prompt_id, cfg.model_id, p.text, cfg.decoding};
        CompletionResult res;
        for (int attempt = 1;; ++attempt) {
            res = client.complete(req);
            if (audit_rows)
                audit_rows->push_back(json{{"prompt_id", p.prompt_id},
                                           {"attempt", attempt},
                                           {"request", json{{"model", req.model_id},
                                                            {"temperature", req.decoding.temperature},
                                                            {"top_k", req.decoding.top_k},
                                                            {"max_tokens", req.decoding.max_tokens}}},
                                           {"ok", res.ok},
                                           {"error", res.error}});
            if (res.ok || !res.transient || attempt > cfg.max_retries) break;
            ++*retry_count;
            std::this_thread::sleep_for(std::chrono::duration<double>(
                cfg.backoff_seconds * static_cast<double>(1 << (attempt - 1))));
        }
        GenerationRecord rec;
        rec.prompt_id = p.prompt_id;
        rec.model_id = cfg.model_id;
        if (!res.ok) {
            rec.extraction_status = ExtractionStatus::failed;
            rec.reason = res.error.empty() ? "completion failed" : res.error;
            return rec;
        }
        rec.raw_completion = res.text;
        auto [text, status] = extract_summary(res.text, cfg.pattern);
        rec.extracted_summary = text;
        rec.extraction_status = status;
        if (status == ExtractionStatus::failed) rec.reason = "no extractable summary in completion";
        return rec;
    };

    std::vector<GenerationRecord> out;
    out.reserve(prompts.size());
    size_t i = 0;
    while (i < prompts.size()) {
        // chunk of at most `workers` pending prompts, evaluated concurrently,
        // committed in order by this (single) writer thread
        std::vector<size_t> chunk;
        while (i < prompts.size() && chunk.size() < std::max<size_t>(cfg.workers, 1)) {
            if (done.count(prompts[i].prompt_id)) {
                out.push_back(done[prompts[i].prompt_id]);
                ++stats.from_checkpoint;
                ++i;
            } else {
                chunk.push_back(i++);
            }
        }
        if (chunk.empty()) continue;
        std::vector<GenerationRecord> recs(chunk.size());
        std::vector<size_t> retries(chunk.size(), 0);
        std::vector<std::vector<json>> audits(chunk.size());
        if (chunk.size() == 1) {
            recs[0] = run_one(prompts[chunk[0]], &retries[0], audit.is_open() ? &audits[0] : nullptr);
        } else {
            std::vector<std::future<GenerationRecord>> futs;
            for (size_t c = 0; c < chunk.size(); ++c)
                futs.push_back(std::async(std::launch::async, [&, c] {
                    return run_one(prompts[chunk[c]], &retries[c], audit.is_open() ? &audits[c] : nullptr);
                }));
            for (size_t c = 0; c < chunk.size(); ++c) recs[c] = futs[c].get();
        }
        for (size_t c = 0; c < chunk.size(); ++c) {
            stats.requested += 1;
            stats.retries += retries[c];
            if (audit.is_open()) {
                for (const json& row : audits[c]) audit << row.dump() << '\n';
                audit.flush();
            }
            if (ckpt.is_open()) {
                ckpt << generation_to_json(recs[c]).dump() << '\n';
                ckpt.flush();
            }
            out.push_back(std::move(recs[c]));
        }
    }

    for (const GenerationRecord& r : out) {
        switch (r.extraction_status) {
            case ExtractionStatus::matched: ++stats.matched; break;
            case ExtractionStatus::fallback: ++stats.fallback; break;
            case ExtractionStatus::failed: ++stats.failed; break;
        }
    }
    if (stats_out) *stats_out = stats;
    return out;
}

// --- scoring rows -----------------------------------------------------------------

// The scoring input format: one row per (model, style, doc, user[, pair]).
struct ScoringRow {
    std::string model_id;
    std::string prompt_style;
    std::string doc_id;
    std::string user_id;
    std::string pair_key;  // "u1+u2" for contrastive rows, empty otherwise
    std::string summary;
};

inline json scoring_row_to_json(const ScoringRow& r) {
    json j{{"model_id", r.model_id},
           {"prompt_style", r.prompt_style},
           {"doc_id", r.doc_id},
           {"user_id", r.user_id},
           {"summary", r.summary}};
    if (!r.pair_key.empty()) j["pair"] = r.pair_key;
    return j;
}

inline ScoringRow scoring_row_from_json(const json& j) {
    return {j.at("model_id"), j.at("prompt_style"), j.at("doc_id"),
            j.at("user_id"),  j.value("pair", ""),  j.at("summary")};
}

// Normalizes generation records into scoring rows. Plain prompts yield one
// row; contrastive prompts re-extract per user ordinal and yield one row per
// user. Failed records yield no rows (callers see the count drop).
inline std::vector<ScoringRow> to_scoring_rows(const std::vector<RenderedPrompt>& prompts,
                                               const std::vector<GenerationRecord>& records,
                                               const ExtractionPattern& pattern = {},
                                               size_t* dropped = nullptr) {
    std::map<std::string, const RenderedPrompt*> by_id;
    for (const RenderedPrompt& p : prompts) by_id[p.prompt_id] = &p;
    std::vector<ScoringRow> rows;
    size_t drop_count = 0;
    for (const GenerationRecord& r : records) {
        auto it = by_id.find(r.prompt_id);
        if (it == by_id.end())
            throw std::runtime_error("generation record for unknown prompt_id: " + r.prompt_id);
        const RenderedPrompt& p = *it->second;
        if (r.extraction_status == ExtractionStatus::failed) {
            drop_count += p.user_ids.size();
            continue;
        }
        if (!is_contrastive(p.style)) {
            rows.push_back({r.model_id, style_name(p.style), p.doc_id, p.user_ids.at(0), "", r.extracted_summary});
        } else {
            const std::string pair_key = join(p.user_ids, "+");
            for (size_t u = 0; u < p.user_ids.size(); ++u) {
                auto [text, status] = extract_summary_for_user(r.raw_completion, u + 1, pattern);
                if (status == ExtractionStatus::failed) {
                    ++drop_count;
                    continue;
                }
                rows.push_back({r.model_id, style_name(p.style), p.doc_id, p.user_ids[u], pair_key, text});
            }
        }
    }
    std::sort(rows.begin(), rows.end(), [](const ScoringRow& a, const ScoringRow& b) {
        return std::tie(a.model_id, a.prompt_style, a.doc_id, a.pair_key, a.user_id) <
               std::tie(b.model_id, b.prompt_style, b.doc_id, b.pair_key, b.user_id);
    });
    if (dropped) *dropped = drop_count;
    return rows;
}

}  // namespace icpl
