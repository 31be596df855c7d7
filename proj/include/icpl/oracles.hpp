#pragma once

// Deterministic oracle models with known personalization properties, plus an
// independent brute-force evaluator. Together they verify the scoring engine
// at desk scale without any LLM in the loop.
//
// Oracle kinds:
//   parrot             returns the target user's gold reference verbatim
//                      (EGISES must be 0)
//   constant           returns one fixed digest of the document for every
//                      user (maximally non-personalized)
//   interpolate:<l>    token mix of l*N reference tokens and (1-l)*N document
//                      body tokens, seeded shuffle; l=1 degenerates to the
//                      reference's first N tokens
//   profile_sensitive  digest sampled from the profile sections actually
//                      present in the prompt text, so a perturbed prompt
//                      changes its output

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "egises.hpp"
#include "genbridge.hpp"
#include "promptforge.hpp"

namespace icpl {

enum class OracleKind { parrot, constant, interpolate, profile_sensitive };

struct OracleModel {
    OracleKind kind = OracleKind::parrot;
    double lambda = 1.0;       // interpolate only
    uint64_t seed = 0;
    size_t summary_tokens = 30;  // digest length N

    std::string name() const {
        switch (kind) {
            case OracleKind::parrot: return "oracle:parrot";
            case OracleKind::constant: return "oracle:constant";
            case OracleKind::interpolate: {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "oracle:interpolate:%g", lambda);
                return buf;
            }
            case OracleKind::profile_sensitive: return "oracle:profile-sensitive";
        }
        return "oracle:?";
    }

    // CLI spelling: parrot | constant | interpolate:<lambda> | profile-sensitive
    static OracleModel parse(const std::string& spec, uint64_t seed = 0) {
        OracleModel m;
        m.seed = seed;
        if (spec == "parrot") {
            m.kind = OracleKind::parrot;
        } else if (spec == "constant") {
            m.kind = OracleKind::constant;
        } else if (spec.rfind("interpolate:", 0) == 0) {
            m.kind = OracleKind::interpolate;
            m.lambda = std::stod(spec.substr(12));
            if (m.lambda < 0.0 || m.lambda > 1.0)
                throw std::invalid_argument("interpolate lambda must be in [0, 1], got " + spec);
        } else if (spec == "profile-sensitive" || spec == "profile_sensitive") {
            m.kind = OracleKind::profile_sensitive;
        } else {
            throw std::invalid_argument("unknown oracle: " + spec);
        }
        return m;
    }
};

struct OracleContext {
    const CorpusStore* corpus = nullptr;
    const std::map<std::string, UserProfile>* users = nullptr;  // by user_id
};

namespace detail {

inline std::vector<std::string> first_tokens(const std::string& text, size_t n) {
    std::vector<std::string> toks = tokenize(text, TokenizerScheme::budget());
    if (toks.size() > n) toks.resize(n);
    return toks;
}

// Marker-delimited sections of a rendered prompt: a line starting with '['
// opens a section named by that line.
inline std::vector<std::pair<std::string, std::string>> prompt_sections(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::string name;
    std::vector<std::string> acc;
    auto flush = [&] {
        if (!name.empty()) out.emplace_back(name, join(acc, "\n"));
        acc.clear();
    };
    for (const std::string& line : split(text, '\n')) {
        if (!line.empty() && line[0] == '[') {
            flush();
            name = line;
        } else {
            acc.push_back(line);
        }
    }
    flush();
    return out;
}

// Text of the profile sections belonging to the target user ordinal: the
// user's history section plus the user's headline lines inside example
// sections. The instruction section never contributes (its format demo also
// contains marker-shaped lines).
inline std::string profile_section_text(const std::string& prompt_text, size_t ordinal, bool contrastive) {
    const std::string hist_marker = "[HISTORY User" + std::to_string(ordinal);
    const std::string ref_marker = contrastive ? "HEADLINE User" + std::to_string(ordinal) + ":" : "HEADLINE:";
    std::vector<std::string> parts;
    for (const auto& [name, body] : prompt_sections(prompt_text)) {
        if (name.rfind(hist_marker, 0) == 0) {
            parts.push_back(body);
        } else if (name.rfind("[EXAMPLE", 0) == 0) {
            for (const std::string& line : split(body, '\n')) {
                std::string t = trim(line);
                if (t.rfind(ref_marker, 0) == 0) parts.push_back(trim(t.substr(ref_marker.size())));
            }
        }
    }
    return join(parts, "\n");
}

inline std::string article_section_text(const std::string& prompt_text) {
    for (const auto& [name, body] : prompt_sections(prompt_text))
        if (name.rfind("[ARTICLE", 0) == 0) return body;
    return "";
}

}  // namespace detail

// Summary for one target user of a prompt. Deterministic in
// (model, prompt, target_user).
inline std::string oracle_summarize(const OracleModel& model, const RenderedPrompt& prompt,
                                    const OracleContext& ctx, const std::string& target_user) {
    auto need_doc = [&]() -> const Document& {
        if (!ctx.corpus) throw std::runtime_error("oracle: corpus context missing");
        auto it = ctx.corpus->find(prompt.doc_id);
        if (it == ctx.corpus->end())
            throw std::runtime_error("oracle: prompt references unknown doc_id: " + prompt.doc_id);
        return it->second;
    };
    auto need_ref = [&]() -> const std::string& {
        if (!ctx.users) throw std::runtime_error("oracle: user context missing");
        auto it = ctx.users->find(target_user);
        if (it == ctx.users->end()) throw std::runtime_error("oracle: unknown user: " + target_user);
        auto ref = it->second.gold_refs.find(prompt.doc_id);
        if (ref == it->second.gold_refs.end())
            throw std::runtime_error("oracle: user '" + target_user + "' has no gold reference for doc '" +
                                     prompt.doc_id + "'");
        return ref->second;
    };

    const uint64_t seed = model.seed ^ fnv1a64(prompt.prompt_id + "#" + target_user);
    const size_t n = model.summary_tokens;

    switch (model.kind) {
        case OracleKind::parrot:
            return need_ref();
        case OracleKind::constant: {
            const Document& d = need_doc();
            return join(detail::first_tokens(d.title + " " + d.body, n), " ");
        }
        case OracleKind::interpolate: {
            const Document& d = need_doc();
            const size_t k = static_cast<size_t>(std::lround(model.lambda * static_cast<double>(n)));
            std::vector<std::string> toks = detail::first_tokens(need_ref(), std::min(k, n));
            for (const std::string& t : detail::first_tokens(d.body, n - std::min(k, n))) toks.push_back(t);
            std::mt19937_64 rng(seed);
            detail::seeded_shuffle(toks, rng);
            return join(toks, " ");
        }
        case OracleKind::profile_sensitive: {
            size_t ordinal = 1;
            for (size_t i = 0; i < prompt.user_ids.size(); ++i)
                if (prompt.user_ids[i] == target_user) ordinal = i + 1;
            std::string text = detail::profile_section_text(prompt.text, ordinal,
                                                            is_contrastive(prompt.style));
            if (trim(text).empty()) text = detail::article_section_text(prompt.text);
            std::vector<std::string> bag = tokenize(text, TokenizerScheme::distribution());
            if (bag.empty())
                throw std::runtime_error("oracle: no profile or article tokens in prompt " + prompt.prompt_id);
            std::mt19937_64 rng(seed);
            std::vector<std::string> toks;
            toks.reserve(n);
            for (size_t i = 0; i < n; ++i) toks.push_back(bag[detail::rng_index(rng, bag.size())]);
            return join(toks, " ");
        }
    }
    throw std::logic_error("oracle_summarize: unreachable");
}

// Completion client over an oracle: answers in the same marker format real
// models are instructed to use, so collection and extraction run unchanged.
class OracleClient : public CompletionClient {
public:
    OracleClient(OracleModel model, OracleContext ctx, std::vector<RenderedPrompt> prompts,
                 ExtractionPattern pattern = {})
        : model_(std::move(model)), ctx_(std::move(ctx)), pattern_(std::move(pattern)) {
        for (RenderedPrompt& p : prompts) prompts_[p.prompt_id] = std::move(p);
    }

    CompletionResult complete(const CompletionRequest& req) override {
        auto it = prompts_.find(req.prompt_id);
        if (it == prompts_.end()) return {false, "", "unknown prompt_id: " + req.prompt_id, false};
        const RenderedPrompt& p = it->second;
        try {
            std::vector<std::string> lines;
            if (!is_contrastive(p.style)) {
                lines.push_back(pattern_.marker + " " + oracle_summarize(model_, p, ctx_, p.user_ids.at(0)));
            } else {
                for (size_t u = 0; u < p.user_ids.size(); ++u)
                    lines.push_back(pattern_.marker_for(u + 1) + " " +
                                    oracle_summarize(model_, p, ctx_, p.user_ids[u]));
            }
            return {true, join(lines, "\n"), "", false};
        } catch (const std::exception& e) {
            return {false, "", e.what(), false};
        }
    }

private:
    OracleModel model_;
    OracleContext ctx_;
    ExtractionPattern pattern_;
    std::map<std::string, RenderedPrompt> prompts_;
};

// --- brute-force evaluator ----------------------------------------------------
//
// A literal, independently structured translation of the score definition.
// It shares only tokenize() with the engine: its own distribution type, its
// own divergence, its own per-k softmax expansion, its own aggregation.

struct BfUser {
    std::string user_id;
    std::string ref_text;
    std::string gen_text;
};

struct BfInstance {
    std::string doc_id;
    std::string doc_text;
    std::vector<BfUser> users;
};

struct BfScores {
    std::map<std::string, double> per_user;  // "doc_id/user_id" -> degress
    double system_degress = 0.0;
    double system_egises = 0.0;
};

namespace bf {

using Dist = std::vector<std::pair<std::string, double>>;  // sorted by token

inline Dist distribution(const std::string& text, const TokenizerScheme& tok) {
    std::map<std::string, size_t> counts;
    std::vector<std::string> toks = tokenize(text, tok);
    for (const std::string& t : toks) ++counts[t];
    Dist d;
    for (const auto& [w, c] : counts)
        d.emplace_back(w, static_cast<double>(c) / static_cast<double>(toks.size()));
    return d;
}

inline double lookup(const Dist& d, const std::string& w) {
    for (const auto& [token, p] : d)
        if (token == w) return p;
    return 0.0;
}

inline double divergence(const Dist& p, const Dist& q) {
    if (p.empty() || q.empty()) throw std::invalid_argument("brute force: empty distribution");
    std::set<std::string> vocab;
    for (const auto& [w, _] : p) vocab.insert(w);
    for (const auto& [w, _] : q) vocab.insert(w);
    const double ln2 = std::log(2.0);
    double kl_p = 0.0, kl_q = 0.0;
    for (const std::string& w : vocab) {
        double pp = lookup(p, w), qq = lookup(q, w);
        double m = (pp + qq) / 2.0;
        if (pp > 0.0) kl_p += pp * (std::log(pp / m) / ln2);
        if (qq > 0.0) kl_q += qq * (std::log(qq / m) / ln2);
    }
    double v = 0.5 * kl_p + 0.5 * kl_q;
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    return v;
}

}  // namespace bf

inline BfScores brute_force_degress(const std::vector<BfInstance>& instances, double epsilon = 1e-8,
                                    double doc_distance_floor = 1e-9, bool include_self_term = true,
                                    const TokenizerScheme& tok = TokenizerScheme::distribution()) {
    BfScores out;
    if (instances.empty()) throw std::invalid_argument("brute force: no instances");
    double doc_sum = 0.0;
    for (const BfInstance& inst : instances) {
        const size_t n = inst.users.size();
        bf::Dist doc = bf::distribution(inst.doc_text, tok);
        std::vector<bf::Dist> refs, gens;
        for (const BfUser& u : inst.users) {
            refs.push_back(bf::distribution(u.ref_text, tok));
            gens.push_back(bf::distribution(u.gen_text, tok));
        }
        double user_sum = 0.0;
        for (size_t j = 0; j < n; ++j) {
            double den_u = bf::divergence(refs[j], doc);
            if (den_u < doc_distance_floor) den_u = doc_distance_floor;
            double den_s = bf::divergence(gens[j], doc);
            if (den_s < doc_distance_floor) den_s = doc_distance_floor;

            // softmax arguments over the index set of the outer sum
            std::vector<size_t> idx;
            for (size_t l = 0; l < n; ++l)
                if (include_self_term || l != j) idx.push_back(l);

            double wmax_u = -1e300, wmax_s = -1e300;
            for (size_t l : idx) {
                wmax_u = std::max(wmax_u, bf::divergence(refs[j], refs[l]) / den_u);
                wmax_s = std::max(wmax_s, bf::divergence(gens[j], gens[l]) / den_s);
            }
            double z_u = 0.0, z_s = 0.0;
            for (size_t l : idx) {
                z_u += std::exp(bf::divergence(refs[j], refs[l]) / den_u - wmax_u);
                z_s += std::exp(bf::divergence(gens[j], gens[l]) / den_s - wmax_s);
            }

            double ratio_sum = 0.0;
            for (size_t k : idx) {
                double sig_u = bf::divergence(refs[j], refs[k]);
                double sig_s = bf::divergence(gens[j], gens[k]);
                double x = std::exp(sig_u / den_u - wmax_u) / z_u * sig_u;
                double y = std::exp(sig_s / den_s - wmax_s) / z_s * sig_s;
                ratio_sum += (std::min(x, y) + epsilon) / (std::max(x, y) + epsilon);
            }
            double degress = ratio_sum / static_cast<double>(idx.size());
            if (degress < 0.0) degress = 0.0;
            if (degress > 1.0) degress = 1.0;
            out.per_user[inst.doc_id + "/" + inst.users[j].user_id] = degress;
            user_sum += degress;
        }
        doc_sum += user_sum / static_cast<double>(n);
    }
    out.system_degress = doc_sum / static_cast<double>(instances.size());
    if (out.system_degress < 0.0) out.system_degress = 0.0;
    if (out.system_degress > 1.0) out.system_degress = 1.0;
    out.system_egises = 1.0 - out.system_degress;
    return out;
}

// --- seeded random fixtures ------------------------------------------------------

struct FixtureSpec {
    size_t max_users = 5;   // >= 2
    size_t max_docs = 6;    // >= 1
    size_t vocab = 12;
    size_t min_text_tokens = 3;
    size_t max_text_tokens = 15;
    size_t min_doc_tokens = 10;
    size_t max_doc_tokens = 30;
};

// Random desk-scale fixture. Texts never reproduce the document's word
// distribution exactly, which keeps the deviation-weight denominators away
// from the floor where winner-take-all softmax terms would amplify harmless
// last-bit divergence differences between two correct implementations.
inline std::vector<BfInstance> random_bf_fixture(uint64_t seed, const FixtureSpec& spec = {},
                                                 const TokenizerScheme& tok = TokenizerScheme::distribution()) {
    std::mt19937_64 rng(seed);
    auto word = [&](size_t i) { return "w" + std::to_string(i); };
    auto text = [&](size_t lo, size_t hi) {
        size_t len = lo + detail::rng_index(rng, hi - lo + 1);
        std::vector<std::string> toks;
        toks.reserve(len);
        for (size_t i = 0; i < len; ++i) toks.push_back(word(detail::rng_index(rng, spec.vocab)));
        return join(toks, " ");
    };
    const size_t n_docs = 1 + detail::rng_index(rng, spec.max_docs);
    std::vector<BfInstance> out;
    for (size_t d = 0; d < n_docs; ++d) {
        BfInstance inst;
        inst.doc_id = "D" + std::to_string(d);
        inst.doc_text = text(spec.min_doc_tokens, spec.max_doc_tokens);
        WordDistribution doc_dist = WordDistribution::from_text(inst.doc_text, tok);
        auto distinct_from_doc = [&](size_t lo, size_t hi) {
            for (int tries = 0; tries < 64; ++tries) {
                std::string t = text(lo, hi);
                if (WordDistribution::from_text(t, tok).mass != doc_dist.mass) return t;
            }
            return std::string("offvocab");  // token outside the w* vocabulary
        };
        const size_t n_users = 2 + detail::rng_index(rng, spec.max_users - 1);
        for (size_t u = 0; u < n_users; ++u)
            inst.users.push_back({"U" + std::to_string(u),
                                  distinct_from_doc(spec.min_text_tokens, spec.max_text_tokens),
                                  distinct_from_doc(spec.min_text_tokens, spec.max_text_tokens)});
        out.push_back(std::move(inst));
    }
    return out;
}

// Engine-side view of a brute-force fixture.
inline std::vector<EvalInstance> instances_from_bf(const std::vector<BfInstance>& bf_instances,
                                                   const std::string& model_id,
                                                   const std::string& prompt_style) {
    std::vector<EvalInstance> out;
    for (const BfInstance& b : bf_instances) {
        EvalInstance inst;
        inst.query_doc = Document{b.doc_id, "", b.doc_text, ""};
        for (const BfUser& u : b.users) {
            UserProfile p;
            p.user_id = u.user_id;
            p.gold_refs[b.doc_id] = u.ref_text;
            inst.users.emplace_back(std::move(p), u.ref_text);
            inst.generated[GenKey{model_id, prompt_style, u.user_id}] = u.gen_text;
        }
        out.push_back(std::move(inst));
    }
    return out;
}

}  // namespace icpl
