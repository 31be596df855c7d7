#pragma once

// Tokenization, token budgets and divergence between word distributions.
//
// Two tokenizer roles exist side by side: budget counting uses plain
// whitespace tokens (prompt budgets are enforced on what the prompt actually
// contains), while distributions are built from lowercased tokens with
// punctuation stripped so that divergence reflects wording, not typography.

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "util.hpp"

namespace icpl {

enum class TokenScheme { whitespace, unicode_word };

struct TokenizerScheme {
    TokenScheme scheme = TokenScheme::whitespace;
    bool lowercase = false;
    bool strip_punct = false;

    // Plain whitespace tokens; the scheme every budget is counted in.
    static TokenizerScheme budget() { return {}; }
    // Default scheme for word distributions.
    static TokenizerScheme distribution() { return {TokenScheme::whitespace, true, true}; }

    static TokenizerScheme parse(const std::string& name, bool lowercase, bool strip_punct) {
        TokenizerScheme t;
        if (name == "whitespace") t.scheme = TokenScheme::whitespace;
        else if (name == "unicode_word") t.scheme = TokenScheme::unicode_word;
        else throw std::invalid_argument("unknown tokenizer scheme: " + name);
        t.lowercase = lowercase;
        t.strip_punct = strip_punct;
        return t;
    }
};

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
inline bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

// Word characters for the unicode_word scheme: ASCII alphanumerics, plus any
// non-ASCII byte (multi-byte UTF-8 sequences stay inside one token).
inline bool is_word_char(unsigned char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

inline std::string strip_edge_punct(std::string tok) {
    size_t b = 0, e = tok.size();
    while (b < e && is_punct(tok[b])) ++b;
    while (e > b && is_punct(tok[e - 1])) --e;
    return tok.substr(b, e - b);
}

}  // namespace detail

inline std::vector<std::string> tokenize(std::string_view text, const TokenizerScheme& scheme) {
    std::vector<std::string> toks;
    if (scheme.scheme == TokenScheme::whitespace) {
        size_t i = 0;
        while (i < text.size()) {
            while (i < text.size() && detail::is_space(text[i])) ++i;
            size_t start = i;
            while (i < text.size() && !detail::is_space(text[i])) ++i;
            if (i > start) toks.emplace_back(text.substr(start, i - start));
        }
        if (scheme.strip_punct) {
            std::vector<std::string> kept;
            kept.reserve(toks.size());
            for (std::string& t : toks) {
                std::string s = detail::strip_edge_punct(std::move(t));
                if (!s.empty()) kept.push_back(std::move(s));
            }
            toks = std::move(kept);
        }
    } else {
        size_t i = 0;
        while (i < text.size()) {
            while (i < text.size() && !detail::is_word_char(static_cast<unsigned char>(text[i]))) ++i;
            size_t start = i;
            while (i < text.size() && detail::is_word_char(static_cast<unsigned char>(text[i]))) ++i;
            if (i > start) toks.emplace_back(text.substr(start, i - start));
        }
    }
    if (scheme.lowercase)
        for (std::string& t : toks) t = to_lower_ascii(std::move(t));
    return toks;
}

inline size_t count_tokens(std::string_view text, const TokenizerScheme& scheme = TokenizerScheme::budget()) {
    return tokenize(text, scheme).size();
}

// Keeps the first `limit` tokens, rejoined with single spaces. Idempotent.
inline std::string truncate_to_budget(std::string_view text, size_t limit,
                                      const TokenizerScheme& scheme = TokenizerScheme::budget()) {
    std::vector<std::string> toks = tokenize(text, scheme);
    if (toks.size() > limit) toks.resize(limit);
    return join(toks, " ");
}

// Keeps the last `limit` tokens; used when head-truncation is configured.
inline std::string truncate_keep_tail(std::string_view text, size_t limit,
                                      const TokenizerScheme& scheme = TokenizerScheme::budget()) {
    std::vector<std::string> toks = tokenize(text, scheme);
    if (toks.size() > limit) toks.erase(toks.begin(), toks.end() - static_cast<ptrdiff_t>(limit));
    return join(toks, " ");
}

// Unigram word distribution. Mass is stored keyed by token in sorted order so
// that every downstream computation walks tokens deterministically.
struct WordDistribution {
    std::map<std::string, double> mass;

    bool empty() const { return mass.empty(); }

    static WordDistribution from_text(std::string_view text,
                                      const TokenizerScheme& scheme = TokenizerScheme::distribution()) {
        WordDistribution d;
        std::vector<std::string> toks = tokenize(text, scheme);
        if (toks.empty()) return d;
        double unit = 1.0 / static_cast<double>(toks.size());
        for (const std::string& t : toks) d.mass[t] += unit;
        return d;
    }
};

// Jensen-Shannon divergence, log base 2, range [0, 1]. Exactly symmetric:
// each key's contribution is a commutative two-term sum evaluated in sorted
// key order regardless of argument order.
inline double jsd(const WordDistribution& p, const WordDistribution& q) {
    if (p.empty() || q.empty())
        throw std::invalid_argument("jsd: undefined divergence operand (empty distribution)");
    auto ip = p.mass.begin(), iq = q.mass.begin();
    double acc = 0.0;
    auto term = [](double a, double m) { return a > 0.0 ? 0.5 * a * std::log2(a / m) : 0.0; };
    while (ip != p.mass.end() || iq != q.mass.end()) {
        double pp = 0.0, qq = 0.0;
        if (iq == q.mass.end() || (ip != p.mass.end() && ip->first < iq->first)) {
            pp = ip->second;
            ++ip;
        } else if (ip == p.mass.end() || iq->first < ip->first) {
            qq = iq->second;
            ++iq;
        } else {
            pp = ip->second;
            qq = iq->second;
            ++ip;
            ++iq;
        }
        double m = 0.5 * (pp + qq);
        acc += term(pp, m) + term(qq, m);
    }
    if (acc < 0.0) acc = 0.0;
    if (acc > 1.0) acc = 1.0;
    return acc;
}

// Square root of JSD (a proper metric); selectable as the divergence.
inline double sqrt_jsd(const WordDistribution& p, const WordDistribution& q) {
    return std::sqrt(jsd(p, q));
}

}  // namespace icpl
