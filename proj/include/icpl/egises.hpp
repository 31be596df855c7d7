#pragma once

// The EGISES / DEGRESS scoring engine.
//
// For document d_i with annotating users U, user j and pair index k:
//
//   w(a|b)    = sigma(a, b) / max(sigma(a, d_i), doc_distance_floor)
//   X_ijk     = softmax_l( w(u_ij|u_il) )[k] * sigma(u_ij, u_ik)
//   Y_ijk     = softmax_l( w(s_ij|s_il) )[k] * sigma(s_ij, s_ik)
//   DEGRESS_j = (1/|U|) * sum_k (min(X_ijk, Y_ijk) + eps) / (max(X_ijk, Y_ijk) + eps)
//
// System DEGRESS is the mean over documents of the mean over that document's
// scored summaries; EGISES = 1 - DEGRESS (lower is better, range [0, 1]).
//
// The self term k = j contributes exactly (0 + eps)/(0 + eps) = 1 and is
// included by default; when excluded, both the outer sum and the softmax
// normalization run over k != j.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "corpus.hpp"
#include "textdist.hpp"

namespace icpl {

enum class Divergence { jsd, sqrt_jsd };

inline Divergence divergence_from_name(const std::string& s) {
    if (s == "jsd") return Divergence::jsd;
    if (s == "sqrt_jsd") return Divergence::sqrt_jsd;
    throw std::invalid_argument("unknown divergence: " + s);
}

struct MetricConfig {
    double epsilon = 1e-8;
    Divergence divergence = Divergence::jsd;
    bool include_self_term = true;
    double doc_distance_floor = 1e-9;
    TokenizerScheme tokenizer = TokenizerScheme::distribution();
};

struct SummaryScore {
    std::string doc_id;
    std::string user_id;
    std::string unit_key;  // distinguishes multiple pair units on one document
    double degress = 0.0;
};

struct SystemScore {
    std::string model_id;
    std::string prompt_style;
    double degress = 0.0;
    double egises = 0.0;  // always exactly 1 - degress
};

// One scoreable (document, user set) context: a full instance for plain
// prompt styles, a sampled user pair for contrastive styles.
struct UnitUser {
    std::string user_id;
    WordDistribution ref;
    WordDistribution gen;
};

struct ScoringUnit {
    std::string doc_id;
    std::string unit_key;  // doc_id for plain styles, doc_id|u1+u2 for pairs
    WordDistribution doc;
    std::vector<UnitUser> users;
};

// sigma between two summaries of a unit; side selects reference or generated.
using PairSigma = std::function<double(const ScoringUnit&, bool generated_side, size_t j, size_t k)>;

namespace detail {

inline double text_sigma(const WordDistribution& a, const WordDistribution& b, Divergence d) {
    return d == Divergence::sqrt_jsd ? sqrt_jsd(a, b) : jsd(a, b);
}

inline PairSigma distribution_pair_sigma(Divergence d) {
    return [d](const ScoringUnit& unit, bool generated_side, size_t j, size_t k) {
        const UnitUser& a = unit.users[j];
        const UnitUser& b = unit.users[k];
        return generated_side ? text_sigma(a.gen, b.gen, d) : text_sigma(a.ref, b.ref, d);
    };
}

inline std::vector<double> softmax(const std::vector<double>& w) {
    double m = *std::max_element(w.begin(), w.end());
    std::vector<double> e(w.size());
    double sum = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
        e[i] = std::exp(w[i] - m);
        sum += e[i];
    }
    for (double& v : e) v /= sum;
    return e;
}

}  // namespace detail

// Proximity-normalized deviation weight w(a|b) = sigma(a,b) / sigma(a,doc),
// with the document distance floored to keep the ratio finite.
inline double weight_from_sigmas(double sigma_ab, double sigma_a_doc, double floor) {
    return sigma_ab / std::max(sigma_a_doc, floor);
}

inline double deviation_weight(const WordDistribution& a, const WordDistribution& b,
                               const WordDistribution& doc, const MetricConfig& cfg = {}) {
    return weight_from_sigmas(detail::text_sigma(a, b, cfg.divergence),
                              detail::text_sigma(a, doc, cfg.divergence), cfg.doc_distance_floor);
}

// DEGRESS of the generated summary for unit user index j.
inline double degress_for_user(const ScoringUnit& unit, size_t j, const MetricConfig& cfg,
                               const PairSigma& pair_sigma) {
    const size_t n = unit.users.size();
    if (n < 2) throw std::invalid_argument("degress: unit needs at least 2 users (doc " + unit.doc_id + ")");
    if (j >= n) throw std::out_of_range("degress: user index out of range");
    for (const UnitUser& u : unit.users) {
        if (u.ref.empty())
            throw std::invalid_argument("degress: empty distribution operand (reference of user " +
                                        u.user_id + ", doc " + unit.doc_id + ")");
        if (u.gen.empty())
            throw std::invalid_argument("degress: empty distribution operand (generated summary of user " +
                                        u.user_id + ", doc " + unit.doc_id + ")");
    }
    if (unit.doc.empty())
        throw std::invalid_argument("degress: empty distribution operand (document " + unit.doc_id + ")");

    std::vector<size_t> ks;
    ks.reserve(n);
    for (size_t k = 0; k < n; ++k)
        if (cfg.include_self_term || k != j) ks.push_back(k);

    const double den_ref = std::max(detail::text_sigma(unit.users[j].ref, unit.doc, cfg.divergence),
                                    cfg.doc_distance_floor);
    const double den_gen = std::max(detail::text_sigma(unit.users[j].gen, unit.doc, cfg.divergence),
                                    cfg.doc_distance_floor);

    std::vector<double> sig_ref(ks.size()), sig_gen(ks.size()), w_ref(ks.size()), w_gen(ks.size());
    for (size_t t = 0; t < ks.size(); ++t) {
        // sigma(a, a) = 0 by definition; the provider is never consulted for
        // the self pair (human-rating sets do not carry one).
        sig_ref[t] = ks[t] == j ? 0.0 : pair_sigma(unit, false, j, ks[t]);
        sig_gen[t] = ks[t] == j ? 0.0 : pair_sigma(unit, true, j, ks[t]);
        w_ref[t] = sig_ref[t] / den_ref;
        w_gen[t] = sig_gen[t] / den_gen;
    }
    const std::vector<double> smx_ref = detail::softmax(w_ref);
    const std::vector<double> smx_gen = detail::softmax(w_gen);

    double acc = 0.0;
    for (size_t t = 0; t < ks.size(); ++t) {
        const double x = smx_ref[t] * sig_ref[t];
        const double y = smx_gen[t] * sig_gen[t];
        acc += (std::min(x, y) + cfg.epsilon) / (std::max(x, y) + cfg.epsilon);
    }
    double degress = acc / static_cast<double>(ks.size());
    return std::clamp(degress, 0.0, 1.0);
}

// --- instance-level API ----------------------------------------------------

inline ScoringUnit unit_from_instance(const EvalInstance& inst, const std::string& model_id,
                                      const std::string& prompt_style, const MetricConfig& cfg) {
    ScoringUnit unit;
    unit.doc_id = inst.query_doc.doc_id;
    unit.unit_key = inst.query_doc.doc_id;
    unit.doc = WordDistribution::from_text(inst.query_doc.title + " " + inst.query_doc.body, cfg.tokenizer);
    for (const auto& [user, ref] : inst.users) {
        auto it = inst.generated.find(GenKey{model_id, prompt_style, user.user_id});
        if (it == inst.generated.end())
            throw std::runtime_error("missing generated summary for model '" + model_id + "', style '" +
                                     prompt_style + "', user '" + user.user_id + "', doc '" +
                                     inst.query_doc.doc_id + "'");
        unit.users.push_back({user.user_id, WordDistribution::from_text(ref, cfg.tokenizer),
                              WordDistribution::from_text(it->second, cfg.tokenizer)});
    }
    return unit;
}

inline SummaryScore degress_summary(const EvalInstance& inst, const std::string& model_id,
                                    const std::string& prompt_style, size_t user_index,
                                    const MetricConfig& cfg = {}) {
    ScoringUnit unit = unit_from_instance(inst, model_id, prompt_style, cfg);
    SummaryScore s;
    s.doc_id = unit.doc_id;
    s.unit_key = unit.unit_key;
    s.user_id = unit.users.at(user_index).user_id;
    s.degress = degress_for_user(unit, user_index, cfg, detail::distribution_pair_sigma(cfg.divergence));
    return s;
}

// --- system-level aggregation ----------------------------------------------

// Mean over documents of the mean over that document's summary scores.
// Summation order is fixed (units sorted by unit_key, documents by doc_id),
// so parallel evaluation cannot change the result.
inline SystemScore degress_system_units(std::vector<ScoringUnit> units, const std::string& model_id,
                                        const std::string& prompt_style, const MetricConfig& cfg,
                                        const PairSigma& pair_sigma,
                                        std::vector<SummaryScore>* details = nullptr, size_t workers = 1) {
    if (units.empty())
        throw std::runtime_error("degress_system: zero scoreable instances for model '" + model_id +
                                 "', style '" + prompt_style + "'");
    std::sort(units.begin(), units.end(),
              [](const ScoringUnit& a, const ScoringUnit& b) { return a.unit_key < b.unit_key; });

    std::vector<std::vector<double>> per_unit(units.size());
    auto score_unit = [&](size_t i) {
        const ScoringUnit& u = units[i];
        per_unit[i].resize(u.users.size());
        for (size_t j = 0; j < u.users.size(); ++j)
            per_unit[i][j] = degress_for_user(u, j, cfg, pair_sigma);
    };
    if (workers <= 1 || units.size() <= 1) {
        for (size_t i = 0; i < units.size(); ++i) score_unit(i);
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        std::exception_ptr err;
        std::mutex err_mu;
        for (size_t w = 0; w < std::min(workers, units.size()); ++w)
            pool.emplace_back([&] {
                for (size_t i = next.fetch_add(1); i < units.size(); i = next.fetch_add(1)) {
                    try {
                        score_unit(i);
                    } catch (...) {
                        std::lock_guard<std::mutex> lk(err_mu);
                        if (!err) err = std::current_exception();
                        return;
                    }
                }
            });
        for (std::thread& t : pool) t.join();
        if (err) std::rethrow_exception(err);
    }

    // doc-level mean over every summary score belonging to that document
    std::map<std::string, std::pair<double, size_t>> per_doc;
    for (size_t i = 0; i < units.size(); ++i) {
        auto& [sum, count] = per_doc[units[i].doc_id];
        for (size_t j = 0; j < per_unit[i].size(); ++j) {
            sum += per_unit[i][j];
            ++count;
            if (details)
                details->push_back({units[i].doc_id, units[i].users[j].user_id, units[i].unit_key,
                                    per_unit[i][j]});
        }
    }
    double acc = 0.0;
    for (const auto& [doc_id, sc] : per_doc) acc += sc.first / static_cast<double>(sc.second);
    double degress = std::clamp(acc / static_cast<double>(per_doc.size()), 0.0, 1.0);

    SystemScore s;
    s.model_id = model_id;
    s.prompt_style = prompt_style;
    s.degress = degress;
    s.egises = 1.0 - degress;
    return s;
}

inline SystemScore degress_system(const std::vector<EvalInstance>& instances, const std::string& model_id,
                                  const std::string& prompt_style, const MetricConfig& cfg = {},
                                  std::vector<SummaryScore>* details = nullptr, size_t workers = 1) {
    std::vector<ScoringUnit> units;
    units.reserve(instances.size());
    for (const EvalInstance& inst : instances)
        units.push_back(unit_from_instance(inst, model_id, prompt_style, cfg));
    return degress_system_units(std::move(units), model_id, prompt_style, cfg,
                                detail::distribution_pair_sigma(cfg.divergence), details, workers);
}

inline double egises_score(const std::vector<EvalInstance>& instances, const std::string& model_id,
                           const std::string& prompt_style, const MetricConfig& cfg = {}) {
    return degress_system(instances, model_id, prompt_style, cfg).egises;
}

// --- human-judgment variant -------------------------------------------------

// Ratings on the 1..6 scale map to pair distances via (6 - rating) / 5;
// summary-document distances stay text divergences.
inline double rating_to_sigma(int rating) {
    if (rating < 1 || rating > 6)
        throw std::invalid_argument("rating out of range 1..6: " + std::to_string(rating));
    return (6.0 - static_cast<double>(rating)) / 5.0;
}

struct HJKey {
    std::string doc_id;
    std::string side;  // "reference" | "generated"
    std::string a_id, b_id;  // canonical: a_id < b_id
    auto operator<=>(const HJKey&) const = default;
};

struct HJRatingSet {
    std::map<HJKey, int> ratings;

    void add(const std::string& doc_id, const std::string& side, std::string a, std::string b, int rating) {
        if (side != "reference" && side != "generated")
            throw std::invalid_argument("rating side must be 'reference' or 'generated', got: " + side);
        if (rating < 1 || rating > 6)
            throw std::invalid_argument("rating out of range 1..6: " + std::to_string(rating));
        if (b < a) std::swap(a, b);
        ratings[HJKey{doc_id, side, a, b}] = rating;
    }

    const int* find(const std::string& doc_id, const std::string& side, std::string a, std::string b) const {
        if (b < a) std::swap(a, b);
        auto it = ratings.find(HJKey{doc_id, side, a, b});
        return it == ratings.end() ? nullptr : &it->second;
    }

    static HJRatingSet from_jsonl(const std::string& path) {
        HJRatingSet set;
        for (const json& j : read_jsonl(path))
            set.add(j.at("doc_id"), j.at("side"), j.at("a_id"), j.at("b_id"), j.at("rating").get<int>());
        return set;
    }
};

inline PairSigma hj_pair_sigma(const HJRatingSet& ratings) {
    return [&ratings](const ScoringUnit& unit, bool generated_side, size_t j, size_t k) {
        const int* r = ratings.find(unit.doc_id, generated_side ? "generated" : "reference",
                                    unit.users[j].user_id, unit.users[k].user_id);
        if (!r)
            throw std::runtime_error("missing rating: doc " + unit.doc_id + ", side " +
                                     (generated_side ? std::string("generated") : std::string("reference")) +
                                     ", pair (" + unit.users[j].user_id + ", " + unit.users[k].user_id + ")");
        return rating_to_sigma(*r);
    };
}

// Validates full rating coverage first and reports every absent pair at once.
inline SystemScore egises_hj(const std::vector<ScoringUnit>& units, const std::string& model_id,
                             const std::string& prompt_style, const HJRatingSet& ratings,
                             const MetricConfig& cfg = {}, std::vector<SummaryScore>* details = nullptr) {
    std::vector<std::string> missing;
    for (const ScoringUnit& u : units)
        for (size_t j = 0; j < u.users.size(); ++j)
            for (size_t k = j + 1; k < u.users.size(); ++k)
                for (const char* side : {"reference", "generated"})
                    if (!ratings.find(u.doc_id, side, u.users[j].user_id, u.users[k].user_id))
                        missing.push_back(u.doc_id + "/" + side + "/(" + u.users[j].user_id + "," +
                                          u.users[k].user_id + ")");
    if (!missing.empty())
        throw std::runtime_error("missing ratings for " + std::to_string(missing.size()) + " pair(s): " +
                                 join(missing, ", "));
    return degress_system_units(units, model_id, prompt_style, cfg, hj_pair_sigma(ratings), details);
}

}  // namespace icpl
