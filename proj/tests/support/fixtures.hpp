#pragma once

// Synthetic corpora for tests. Every user owns a topic vocabulary pool that
// overlaps its neighbors' pools, the user's click-history documents and gold
// references draw from that pool, and evaluation-document bodies mix the
// whole vocabulary. Profile-conditioned generation therefore produces
// summary distances that track reference distances, which is what the
// adversarial profile-swap checks rely on.

#include <atomic>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "icpl/textdist.hpp"
#include "icpl/util.hpp"

namespace fixtures {

struct SynthSpec {
    size_t docs = 6;   // evaluation documents, all annotated by every user
    size_t users = 6;
    size_t pool_words = 10;
    size_t pool_stride = 5;  // adjacent users share pool_words - stride words
    size_t history_docs_per_user = 3;
    size_t history_title_tokens = 6;
    size_t history_body_tokens = 20;
    size_t body_tokens = 120;
    size_t title_tokens = 3;
    size_t ref_pool_tokens = 8;
    size_t ref_doc_tokens = 2;
    uint64_t seed = 7;
};

struct SynthData {
    std::string corpus_tsv;
    std::string users_tsv;
};

inline std::string word(size_t i) { return "w" + std::to_string(i); }

// seeded per item, so items are stable under spec changes elsewhere
inline std::vector<std::string> sample_tokens(uint64_t seed, size_t lo, size_t hi, size_t n) {
    std::mt19937_64 rng(seed);
    std::vector<std::string> out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) out.push_back(word(lo + static_cast<size_t>(rng() % (hi - lo))));
    return out;
}

inline SynthData make_synthetic(const SynthSpec& s) {
    const size_t vocab = s.pool_stride * (s.users - 1) + s.pool_words;
    auto pool_lo = [&](size_t u) { return s.pool_stride * u; };
    auto pool_hi = [&](size_t u) { return s.pool_stride * u + s.pool_words; };

    std::string corpus = "doc_id\ttitle\tbody\tcategory\n";
    std::vector<std::string> doc_ids;
    std::map<std::string, std::string> bodies;
    for (size_t d = 0; d < s.docs; ++d) {
        const std::string id = "D" + std::to_string(d);
        doc_ids.push_back(id);
        auto title = sample_tokens(s.seed ^ icpl::fnv1a64("title|" + id), 0, vocab, s.title_tokens);
        auto body = sample_tokens(s.seed ^ icpl::fnv1a64("body|" + id), 0, vocab, s.body_tokens);
        bodies[id] = icpl::join(body, " ");
        corpus += id + "\t" + icpl::join(title, " ") + "\t" + bodies[id] + "\tnews\n";
    }
    for (size_t u = 0; u < s.users; ++u)
        for (size_t k = 0; k < s.history_docs_per_user; ++k) {
            const std::string id = "H" + std::to_string(u) + "_" + std::to_string(k);
            auto title = sample_tokens(s.seed ^ icpl::fnv1a64("htitle|" + id), pool_lo(u), pool_hi(u),
                                       s.history_title_tokens);
            auto body = sample_tokens(s.seed ^ icpl::fnv1a64("hbody|" + id), pool_lo(u), pool_hi(u),
                                      s.history_body_tokens);
            corpus += id + "\t" + icpl::join(title, " ") + "\t" + icpl::join(body, " ") + "\thistory\n";
        }

    std::string users = "userid\tclicknewsID\tposnewID\trewrite_titles\n";
    for (size_t u = 0; u < s.users; ++u) {
        const std::string uid = "U" + std::to_string(u);
        std::vector<std::string> clicks;
        for (size_t k = 0; k < s.history_docs_per_user; ++k)
            clicks.push_back("H" + std::to_string(u) + "_" + std::to_string(k));
        std::vector<std::string> refs;
        for (const std::string& d : doc_ids) {
            auto toks = sample_tokens(s.seed ^ icpl::fnv1a64("ref|" + uid + "|" + d), pool_lo(u),
                                      pool_hi(u), s.ref_pool_tokens);
            if (s.ref_doc_tokens) {
                auto doc_toks = icpl::tokenize(bodies[d], icpl::TokenizerScheme::budget());
                std::mt19937_64 rng(s.seed ^ icpl::fnv1a64("refdoc|" + uid + "|" + d));
                for (size_t i = 0; i < s.ref_doc_tokens && !doc_toks.empty(); ++i)
                    toks.push_back(doc_toks[static_cast<size_t>(rng() % doc_toks.size())]);
            }
            refs.push_back(icpl::join(toks, " "));
        }
        users += uid + "\t" + icpl::join(clicks, ",") + "\t" + icpl::join(doc_ids, ",") + "\t" +
                 icpl::join(refs, "#TAB#") + "\n";
    }
    return {std::move(corpus), std::move(users)};
}

struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        static std::atomic<unsigned> counter{0};
        path = std::filesystem::temp_directory_path() /
               ("icpl_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }

    std::string str() const { return path.string(); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace fixtures
