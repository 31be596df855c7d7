#pragma once

// Paradox probes over a model x style score table, aggregate deltas, the
// weak/strong in-context personalization verdicts, and report emission.
//
// A probe rule pairs a poorer prompt style with a richer one; the paradox
// fires when the richer prompt fails to improve the score, i.e. when
// egises(richer) >= egises(poorer) (lower is better; ties are paradoxes).
// Deltas are signed percentage points: (richer - poorer) * 100.
//
// Two rule sets ship:
//   definitional  all nine richer-vs-poorer comparisons the probe taxonomy
//                 defines (shot inflation with and without history, plain
//                 and contrastive, history addition, contrast addition)
//   empirical     the five comparisons published results are reported
//                 against (the default)
//
// Both sets share the PX-3 and PX-4 definitions.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "egises.hpp"
#include "style.hpp"
#include "util.hpp"

namespace icpl {

// --- score tables -----------------------------------------------------------

struct ScoreTable {
    // model -> style -> EGISES
    std::map<std::string, std::map<PromptStyle, double>> scores;
    std::string provenance = "computed";  // "computed" | "imported"

    bool partial(const std::string& model) const {
        auto it = scores.find(model);
        return it == scores.end() || it->second.size() < all_styles.size();
    }

    const double* find(const std::string& model, PromptStyle style) const {
        auto it = scores.find(model);
        if (it == scores.end()) return nullptr;
        auto jt = it->second.find(style);
        return jt == it->second.end() ? nullptr : &jt->second;
    }

    // CSV import: header "model_id" followed by the six style tokens.
    static ScoreTable from_csv(const std::string& path) {
        ScoreTable t;
        t.provenance = "imported";
        std::vector<std::string> lines = split(read_file(path), '\n');
        if (lines.empty() || trim(lines[0]).empty()) throw std::runtime_error(path + ": empty score table");
        std::vector<std::string> header = split(trim(lines[0]), ',');
        if (header.empty() || trim(header[0]) != "model_id")
            throw std::runtime_error(path + ": first column must be model_id");
        std::vector<PromptStyle> cols;
        for (size_t i = 1; i < header.size(); ++i) cols.push_back(style_from_name(trim(header[i])));
        for (size_t i = 1; i < lines.size(); ++i) {
            std::string line = trim(lines[i]);
            if (line.empty()) continue;
            std::vector<std::string> cells = split(line, ',');
            if (cells.size() != cols.size() + 1)
                throw std::runtime_error(path + ":" + std::to_string(i + 1) + ": expected " +
                                         std::to_string(cols.size() + 1) + " cells");
            const std::string model = trim(cells[0]);
            for (size_t c = 0; c < cols.size(); ++c) {
                std::string cell = trim(cells[c + 1]);
                if (cell.empty()) continue;  // absent style stays absent
                t.scores[model][cols[c]] = std::stod(cell);
            }
        }
        return t;
    }

    std::string to_csv() const {
        std::string out = "model_id";
        for (PromptStyle s : all_styles) out += "," + style_name(s);
        out += "\n";
        for (const auto& [model, styles] : scores) {
            out += model;
            for (PromptStyle s : all_styles) {
                out += ",";
                auto it = styles.find(s);
                if (it != styles.end()) {
                    char buf[32];
                    std::snprintf(buf, sizeof(buf), "%.6g", it->second);
                    out += buf;
                }
            }
            out += "\n";
        }
        return out;
    }

    static ScoreTable from_system_scores(const std::vector<SystemScore>& scores) {
        ScoreTable t;
        t.provenance = "computed";
        for (const SystemScore& s : scores) t.scores[s.model_id][style_from_name(s.prompt_style)] = s.egises;
        return t;
    }
};

// --- rules ---------------------------------------------------------------------

struct ParadoxRule {
    std::string name;
    PromptStyle poorer;
    PromptStyle richer;
    std::string description;
};

enum class RuleSetKind { definitional, empirical };

inline RuleSetKind rule_set_from_name(const std::string& s) {
    if (s == "definitional") return RuleSetKind::definitional;
    if (s == "empirical") return RuleSetKind::empirical;
    throw std::invalid_argument("unknown rule set: " + s);
}

inline std::string rule_set_name(RuleSetKind k) {
    return k == RuleSetKind::definitional ? "definitional" : "empirical";
}

inline std::vector<ParadoxRule> rule_set(RuleSetKind kind) {
    using S = PromptStyle;
    if (kind == RuleSetKind::empirical)
        return {
            {"PX-1", S::zero_shot, S::two_shot_no_hist, "examples fail to improve on zero-shot"},
            {"PX-2", S::zero_shot, S::two_shot_hist, "examples plus history fail to improve on zero-shot"},
            {"PX-3", S::zero_shot, S::c_zero_shot, "added contrast fails to improve zero-shot"},
            {"PX-4", S::two_shot_no_hist, S::c_two_shot_no_hist, "added contrast fails to improve two-shot"},
            {"PX-5", S::c_zero_shot, S::c_two_shot_hist,
             "contrastive examples plus history fail to improve contrastive zero-shot"},
        };
    return {
        {"PX-1", S::zero_shot, S::two_shot_no_hist, "examples fail to improve on zero-shot"},
        {"PX-1-h", S::zero_shot, S::two_shot_hist, "examples with history fail to improve on zero-shot"},
        {"PX-1-C", S::c_zero_shot, S::c_two_shot_no_hist,
         "contrastive examples fail to improve on contrastive zero-shot"},
        {"PX-1-h-C", S::c_zero_shot, S::c_two_shot_hist,
         "contrastive examples with history fail to improve on contrastive zero-shot"},
        {"PX-2", S::two_shot_no_hist, S::two_shot_hist, "added history fails to improve two-shot"},
        {"PX-2-C", S::c_two_shot_no_hist, S::c_two_shot_hist,
         "added history fails to improve contrastive two-shot"},
        {"PX-3", S::zero_shot, S::c_zero_shot, "added contrast fails to improve zero-shot"},
        {"PX-4", S::two_shot_no_hist, S::c_two_shot_no_hist, "added contrast fails to improve two-shot"},
        {"PX-5", S::two_shot_hist, S::c_two_shot_hist,
         "added contrast fails to improve two-shot with history"},
    };
}

// --- paradox detection ------------------------------------------------------------

enum class CellState { paradox, pass, not_evaluable };

inline std::string cell_state_name(CellState s) {
    switch (s) {
        case CellState::paradox: return "paradox";
        case CellState::pass: return "pass";
        case CellState::not_evaluable: return "not-evaluable";
    }
    return "not-evaluable";
}

struct ParadoxMatrix {
    std::string rule_set_label;  // every matrix names its rule set
    std::vector<ParadoxRule> rules;
    std::vector<std::string> rule_names;
    std::map<std::string, std::map<std::string, CellState>> flags;   // model -> rule -> state
    std::map<std::string, std::map<std::string, double>> deltas_pp;  // model -> rule -> (richer-poorer)*100
};

inline ParadoxMatrix detect_paradoxes(const ScoreTable& table, const std::vector<ParadoxRule>& rules,
                                      const std::string& rule_set_label) {
    ParadoxMatrix m;
    m.rule_set_label = rule_set_label;
    m.rules = rules;
    for (const ParadoxRule& r : rules) m.rule_names.push_back(r.name);
    for (const auto& [model, styles] : table.scores) {
        (void)styles;
        for (const ParadoxRule& r : rules) {
            const double* poorer = table.find(model, r.poorer);
            const double* richer = table.find(model, r.richer);
            if (!poorer || !richer) {
                m.flags[model][r.name] = CellState::not_evaluable;  // never guessed
                continue;
            }
            const double delta = (*richer - *poorer) * 100.0;
            m.deltas_pp[model][r.name] = delta;
            m.flags[model][r.name] = delta >= 0.0 ? CellState::paradox : CellState::pass;
        }
    }
    return m;
}

// --- delta aggregation ---------------------------------------------------------------

struct RuleAggregate {
    std::string rule;
    size_t improving_count = 0;
    double improving_mean_pp = 0.0;  // mean |delta| over improving models
    size_t violating_count = 0;
    double violating_mean_pp = 0.0;  // mean |delta| over paradox models
    double max_improvement_pp = 0.0;
    std::string max_improvement_model;
};

struct AggregateReport {
    std::vector<RuleAggregate> rules;

    const RuleAggregate* find(const std::string& rule) const {
        for (const RuleAggregate& r : rules)
            if (r.rule == rule) return &r;
        return nullptr;
    }

    json to_json() const {
        json out = json::object();
        for (const RuleAggregate& r : rules)
            out[r.rule] = json{{"improving_count", r.improving_count},
                               {"improving_mean_pp", r.improving_mean_pp},
                               {"violating_count", r.violating_count},
                               {"violating_mean_pp", r.violating_mean_pp},
                               {"max_improvement_pp", r.max_improvement_pp},
                               {"max_improvement_model", r.max_improvement_model}};
        return out;
    }
};

inline AggregateReport aggregate_deltas(const ScoreTable& table, const std::vector<ParadoxRule>& rules) {
    AggregateReport report;
    for (const ParadoxRule& r : rules) {
        RuleAggregate agg;
        agg.rule = r.name;
        double imp_sum = 0.0, vio_sum = 0.0;
        for (const auto& [model, styles] : table.scores) {
            (void)styles;
            const double* poorer = table.find(model, r.poorer);
            const double* richer = table.find(model, r.richer);
            if (!poorer || !richer) continue;
            const double delta = (*richer - *poorer) * 100.0;
            if (delta < 0.0) {
                ++agg.improving_count;
                imp_sum += -delta;
                if (-delta > agg.max_improvement_pp) {
                    agg.max_improvement_pp = -delta;
                    agg.max_improvement_model = model;
                }
            } else {
                ++agg.violating_count;
                vio_sum += delta;
            }
        }
        if (agg.improving_count) agg.improving_mean_pp = imp_sum / static_cast<double>(agg.improving_count);
        if (agg.violating_count) agg.violating_mean_pp = vio_sum / static_cast<double>(agg.violating_count);
        report.rules.push_back(std::move(agg));
    }
    return report;
}

// --- weak / strong ICPL --------------------------------------------------------------

struct ViolatingPair {
    std::string doc_id;
    std::string unit_key;
    std::string user_a, user_b;
    double ref_sigma = 0.0;
    double gen_sigma = 0.0;
};

struct IcplVerdict {
    std::string model_id;
    bool weak = false;
    bool strong = false;
    std::vector<ViolatingPair> violations;
    double tau_u = 0.0;
    double tau_s = 0.0;
};

// Median pairwise reference divergence over all units: the default threshold.
inline double default_tau(const std::vector<ScoringUnit>& units, Divergence d = Divergence::jsd) {
    std::vector<double> sigmas;
    for (const ScoringUnit& u : units)
        for (size_t j = 0; j < u.users.size(); ++j)
            for (size_t k = j + 1; k < u.users.size(); ++k)
                sigmas.push_back(detail::text_sigma(u.users[j].ref, u.users[k].ref, d));
    if (sigmas.empty()) throw std::runtime_error("default_tau: no reference pairs");
    std::sort(sigmas.begin(), sigmas.end());
    const size_t n = sigmas.size();
    return n % 2 ? sigmas[n / 2] : 0.5 * (sigmas[n / 2 - 1] + sigmas[n / 2]);
}

// Weak ICPL: whenever two references agree (sigma_ref <= tau_u), the
// generated summaries agree too (sigma_gen <= tau_s). Strong ICPL adds the
// converse: disagreeing references yield disagreeing summaries.
inline IcplVerdict classify_icpl(const std::vector<ScoringUnit>& units, const std::string& model_id,
                                 double tau_u, double tau_s, Divergence divergence = Divergence::jsd) {
    IcplVerdict v;
    v.model_id = model_id;
    v.tau_u = tau_u;
    v.tau_s = tau_s;
    bool weak_holds = true, strong_extra_holds = true;
    for (const ScoringUnit& u : units) {
        for (size_t j = 0; j < u.users.size(); ++j) {
            for (size_t k = j + 1; k < u.users.size(); ++k) {
                const double sr = detail::text_sigma(u.users[j].ref, u.users[k].ref, divergence);
                const double sg = detail::text_sigma(u.users[j].gen, u.users[k].gen, divergence);
                const bool weak_ok = sr > tau_u || sg <= tau_s;
                const bool strong_ok = sr <= tau_u || sg > tau_s;
                if (!weak_ok || !strong_ok) {
                    if (!weak_ok) weak_holds = false;
                    if (!strong_ok) strong_extra_holds = false;
                    v.violations.push_back({u.doc_id, u.unit_key, u.users[j].user_id, u.users[k].user_id,
                                            sr, sg});
                }
            }
        }
    }
    v.weak = weak_holds;
    v.strong = weak_holds && strong_extra_holds;
    return v;
}

inline json verdict_to_json(const IcplVerdict& v) {
    json viol = json::array();
    for (const ViolatingPair& p : v.violations)
        viol.push_back(json{{"doc_id", p.doc_id},
                            {"unit", p.unit_key},
                            {"user_a", p.user_a},
                            {"user_b", p.user_b},
                            {"ref_sigma", p.ref_sigma},
                            {"gen_sigma", p.gen_sigma}});
    return json{{"model_id", v.model_id}, {"weak", v.weak},   {"strong", v.strong},
                {"tau_u", v.tau_u},       {"tau_s", v.tau_s}, {"violations", viol}};
}

// --- reporting -------------------------------------------------------------------------

struct LeaderboardRow {
    std::string model_id;
    PromptStyle best_style = PromptStyle::zero_shot;
    double best_egises = 0.0;
};

// Per-model best (minimum) EGISES across styles, ranked ascending; ties break
// by model_id.
inline std::vector<LeaderboardRow> leaderboard(const ScoreTable& table) {
    std::vector<LeaderboardRow> rows;
    for (const auto& [model, styles] : table.scores) {
        if (styles.empty()) continue;
        LeaderboardRow row;
        row.model_id = model;
        row.best_egises = 2.0;
        for (PromptStyle s : all_styles) {
            auto it = styles.find(s);
            if (it != styles.end() && it->second < row.best_egises) {
                row.best_egises = it->second;
                row.best_style = s;
            }
        }
        rows.push_back(row);
    }
    std::sort(rows.begin(), rows.end(), [](const LeaderboardRow& a, const LeaderboardRow& b) {
        return std::tie(a.best_egises, a.model_id) < std::tie(b.best_egises, b.model_id);
    });
    return rows;
}

struct ReportOptions {
    // Optional model -> base model pairing; paradox cells of a tuned model
    // that still improves on its base under the richer style are daggered.
    // The pairing semantics are an interpretation, hence opt-in.
    std::map<std::string, std::string> base_model_map;
};

struct ReportFiles {
    std::string leaderboard_md;
    std::string paradox_matrix_csv;
    std::string aggregates_json;
};

namespace detail {

inline std::string fmt_pp(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%+.4f", v);
    return buf;
}

inline std::string fmt_score(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace detail

inline ReportFiles emit_report(const ScoreTable& table, const ParadoxMatrix& matrix,
                               const AggregateReport& aggregates, const ReportOptions& opts = {}) {
    ReportFiles files;

    // paradox_matrix.csv: one row per model (sorted), flag and delta per rule
    {
        std::string csv = "model_id,rule_set";
        for (const std::string& rule : matrix.rule_names) csv += "," + rule + "," + rule + "_delta_pp";
        csv += "\n";
        for (const auto& [model, cells] : matrix.flags) {
            csv += model + "," + matrix.rule_set_label;
            for (const std::string& rule : matrix.rule_names) {
                auto it = cells.find(rule);
                CellState state = it == cells.end() ? CellState::not_evaluable : it->second;
                csv += "," + cell_state_name(state) + ",";
                if (state != CellState::not_evaluable)
                    csv += detail::fmt_pp(matrix.deltas_pp.at(model).at(rule));
            }
            csv += "\n";
        }
        files.paradox_matrix_csv = csv;
    }

    files.aggregates_json = aggregates.to_json().dump(2) + "\n";

    // leaderboard.md: ranked best-style scores plus the paradox marks
    {
        std::string md = "# Personalization leaderboard\n\n";
        md += "Lower EGISES is better. Best style per model.\n\n";
        md += "| rank | model | style | EGISES |\n|---:|---|---|---|\n";
        std::vector<LeaderboardRow> rows = leaderboard(table);
        for (size_t i = 0; i < rows.size(); ++i)
            md += "| " + std::to_string(i + 1) + " | " + rows[i].model_id + " | " +
                  style_name(rows[i].best_style) + " | " + detail::fmt_score(rows[i].best_egises) + " |\n";
        if (!matrix.rule_names.empty()) {
            md += "\n## Paradox matrix (" + matrix.rule_set_label + " rules)\n\n";
            md += "x = paradox, ok = pass, - = not evaluable";
            if (!opts.base_model_map.empty())
                md += "; a trailing + marks a paradox where the model still improves on its base model";
            md += "\n\n| model |";
            for (const std::string& rule : matrix.rule_names) md += " " + rule + " |";
            md += "\n|---|";
            for (size_t i = 0; i < matrix.rule_names.size(); ++i) md += "---|";
            md += "\n";
            for (const auto& [model, cells] : matrix.flags) {
                md += "| " + model + " |";
                for (const std::string& rule : matrix.rule_names) {
                    auto it = cells.find(rule);
                    CellState state = it == cells.end() ? CellState::not_evaluable : it->second;
                    std::string mark = state == CellState::paradox ? "x"
                                       : state == CellState::pass  ? "ok"
                                                                   : "-";
                    if (state == CellState::paradox) {
                        auto base = opts.base_model_map.find(model);
                        if (base != opts.base_model_map.end()) {
                            // does the tuned model beat its base under the richer style?
                            for (const ParadoxRule& r : matrix.rules)
                                if (r.name == rule) {
                                    const double* mine = table.find(model, r.richer);
                                    const double* theirs = table.find(base->second, r.richer);
                                    if (mine && theirs && *mine < *theirs) mark += "+";
                                }
                        }
                    }
                    md += " " + mark + " |";
                }
                md += "\n";
            }
        }
        files.leaderboard_md = md;
    }
    return files;
}

}  // namespace icpl
