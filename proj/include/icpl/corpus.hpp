#pragma once

// News corpus and user-profile ingestion, evaluation instances and
// contrastive pair sampling.
//
// Input formats:
//   news TSV:  header row with columns doc_id, title, body, category
//   user TSV:  header row with columns userid, clicknewsID, posnewID,
//              rewrite_titles; clicknewsID/posnewID are comma separated id
//              lists, rewrite_titles is a "#TAB#" separated title list zipped
//              against posnewID
//   JSONL mirrors of both with identical field names (lists as arrays).
//
// All parsing and sampling is a pure function of (file bytes, seed, config):
// no clocks, no environment, no global state.

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "util.hpp"

namespace icpl {

struct Document {
    std::string doc_id;
    std::string title;
    std::string body;   // nonempty for well-formed rows
    std::string category;
};

struct UserProfile {
    std::string user_id;
    std::vector<std::string> click_history;        // doc ids, temporal order
    std::map<std::string, std::string> gold_refs;  // doc_id -> reference summary
};

// Key for generated summaries attached to an instance.
struct GenKey {
    std::string model_id;
    std::string prompt_style;
    std::string user_id;
    auto operator<=>(const GenKey&) const = default;
};

struct EvalInstance {
    Document query_doc;
    // (profile, gold reference for query_doc), sorted by user_id, unique.
    std::vector<std::pair<UserProfile, std::string>> users;
    std::map<GenKey, std::string> generated;
};

struct SharedExample {
    Document doc;
    std::string ref_user1;
    std::string ref_user2;
};

enum class PerturbationTag { genuine, adversarial };

inline std::string perturbation_tag_name(PerturbationTag t) {
    return t == PerturbationTag::genuine ? "genuine" : "adversarial";
}

inline PerturbationTag perturbation_tag_from_name(const std::string& s) {
    if (s == "genuine") return PerturbationTag::genuine;
    if (s == "adversarial") return PerturbationTag::adversarial;
    throw std::invalid_argument("unknown perturbation tag: " + s);
}

struct ContrastiveSample {
    Document query_doc;
    std::pair<UserProfile, UserProfile> user_pair;  // user1.user_id < user2.user_id
    std::vector<SharedExample> shared_example_docs; // ordered by doc_id
    PerturbationTag perturbation_tag = PerturbationTag::genuine;
    bool no_shared_examples = false;  // usable only for c_zero_shot when true
};

enum class CorpusFormat { tsv, jsonl };

inline CorpusFormat corpus_format_from_name(const std::string& s) {
    if (s == "tsv") return CorpusFormat::tsv;
    if (s == "jsonl") return CorpusFormat::jsonl;
    throw std::invalid_argument("unknown corpus format: " + s);
}

struct Diagnostic {
    std::string severity;  // "warning" | "error"
    std::string code;
    std::string message;
    json context;  // row number, offending id, ...

    json to_json() const {
        return json{{"severity", severity}, {"code", code}, {"message", message}, {"context", context}};
    }
};

using CorpusStore = std::map<std::string, Document>;

namespace detail {

// Column lookup from a header row; required columns must all be present.
inline std::map<std::string, size_t> header_index(const std::vector<std::string>& header,
                                                  const std::vector<std::string>& required,
                                                  const std::string& path) {
    std::map<std::string, size_t> idx;
    for (size_t i = 0; i < header.size(); ++i) idx[trim(header[i])] = i;
    for (const std::string& col : required)
        if (!idx.count(col)) throw std::runtime_error(path + ": missing required column '" + col + "'");
    return idx;
}

inline std::string field(const std::vector<std::string>& row, const std::map<std::string, size_t>& idx,
                         const std::string& col) {
    auto it = idx.find(col);
    if (it == idx.end() || it->second >= row.size()) return "";
    return row[it->second];
}

inline std::vector<std::string> id_list(const std::string& raw) {
    std::vector<std::string> out;
    for (const std::string& part : split(raw, ',')) {
        std::string id = trim(part);
        if (!id.empty()) out.push_back(id);
    }
    return out;
}

}  // namespace detail

// --- news corpus ---------------------------------------------------------

inline CorpusStore parse_news_corpus(const std::string& path, CorpusFormat format,
                                     std::vector<Diagnostic>& diags) {
    CorpusStore store;
    auto add = [&](Document d, size_t row) {
        if (d.doc_id.empty()) {
            diags.push_back({"warning", "missing-doc-id", "row has no doc_id", json{{"row", row}}});
            return;
        }
        if (d.body.empty()) {
            diags.push_back({"warning", "empty-body", "document has empty body", json{{"row", row}, {"doc_id", d.doc_id}}});
            return;
        }
        if (store.count(d.doc_id))
            throw std::runtime_error("duplicate doc_id: " + d.doc_id);
        store.emplace(d.doc_id, std::move(d));
    };

    if (format == CorpusFormat::jsonl) {
        std::vector<json> rows = read_jsonl(path);
        for (size_t i = 0; i < rows.size(); ++i) {
            const json& j = rows[i];
            Document d;
            d.doc_id = j.value("doc_id", "");
            d.title = j.value("title", "");
            d.body = j.value("body", "");
            d.category = j.value("category", "");
            add(std::move(d), i + 1);
        }
        return store;
    }

    std::string content = read_file(path);
    if (trim(content).empty()) return store;  // empty file: empty store, no diagnostics
    std::vector<std::string> lines = split(content, '\n');
    std::vector<std::string> header = split(lines[0], '\t');
    if (!header.empty() && !header.back().empty() && header.back().back() == '\r') header.back().pop_back();
    auto idx = detail::header_index(header, {"doc_id", "title", "body"}, path);
    for (size_t i = 1; i < lines.size(); ++i) {
        std::string line = lines[i];
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> row = split(line, '\t');
        if (row.size() != header.size()) {
            diags.push_back({"warning", "column-count", "row has " + std::to_string(row.size()) +
                             " columns, expected " + std::to_string(header.size()),
                             json{{"row", i + 1}}});
            continue;
        }
        Document d;
        d.doc_id = detail::field(row, idx, "doc_id");
        d.title = detail::field(row, idx, "title");
        d.body = detail::field(row, idx, "body");
        d.category = detail::field(row, idx, "category");
        add(std::move(d), i + 1);
    }
    return store;
}

// --- user table ----------------------------------------------------------

inline std::vector<UserProfile> parse_user_table(const std::string& path, CorpusFormat format,
                                                 const CorpusStore& corpus,
                                                 std::vector<Diagnostic>& diags) {
    struct RawRow {
        std::string user_id;
        std::vector<std::string> clicks, pos_ids, titles;
        size_t row = 0;
    };
    std::vector<RawRow> raws;

    if (format == CorpusFormat::jsonl) {
        std::vector<json> rows = read_jsonl(path);
        auto as_list = [](const json& v, const std::string& delim) -> std::vector<std::string> {
            if (v.is_array()) {
                std::vector<std::string> out;
                for (const json& e : v) out.push_back(e.get<std::string>());
                return out;
            }
            if (v.is_string()) {
                const std::string s = v.get<std::string>();
                std::vector<std::string> out;
                for (const std::string& part : (delim == "," ? split(s, ',') : split_str(s, delim))) {
                    std::string t = trim(part);
                    if (!t.empty()) out.push_back(t);
                }
                return out;
            }
            return {};
        };
        for (size_t i = 0; i < rows.size(); ++i) {
            const json& j = rows[i];
            RawRow r;
            r.user_id = j.value("userid", "");
            r.clicks = as_list(j.value("clicknewsID", json::array()), ",");
            r.pos_ids = as_list(j.value("posnewID", json::array()), ",");
            r.titles = as_list(j.value("rewrite_titles", json::array()), "#TAB#");
            r.row = i + 1;
            raws.push_back(std::move(r));
        }
    } else {
        std::string content = read_file(path);
        if (trim(content).empty()) return {};
        std::vector<std::string> lines = split(content, '\n');
        std::vector<std::string> header = split(lines[0], '\t');
        if (!header.empty() && !header.back().empty() && header.back().back() == '\r') header.back().pop_back();
        auto idx = detail::header_index(header, {"userid", "clicknewsID", "posnewID", "rewrite_titles"}, path);
        for (size_t i = 1; i < lines.size(); ++i) {
            std::string line = lines[i];
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            std::vector<std::string> row = split(line, '\t');
            if (row.size() != header.size()) {
                diags.push_back({"warning", "column-count", "row has " + std::to_string(row.size()) +
                                 " columns, expected " + std::to_string(header.size()),
                                 json{{"row", i + 1}}});
                continue;
            }
            RawRow r;
            r.user_id = detail::field(row, idx, "userid");
            r.clicks = detail::id_list(detail::field(row, idx, "clicknewsID"));
            r.pos_ids = detail::id_list(detail::field(row, idx, "posnewID"));
            for (const std::string& t : split_str(detail::field(row, idx, "rewrite_titles"), "#TAB#")) {
                std::string s = trim(t);
                if (!s.empty()) r.titles.push_back(s);
            }
            r.row = i + 1;
            raws.push_back(std::move(r));
        }
    }

    std::vector<UserProfile> users;
    std::set<std::string> seen;
    for (RawRow& r : raws) {
        if (r.user_id.empty()) {
            diags.push_back({"warning", "missing-user-id", "row has no userid", json{{"row", r.row}}});
            continue;
        }
        if (seen.count(r.user_id))
            throw std::runtime_error("duplicate userid: " + r.user_id);
        seen.insert(r.user_id);
        if (r.pos_ids.size() != r.titles.size()) {
            diags.push_back({"warning", "ref-count-mismatch",
                             "posnewID count " + std::to_string(r.pos_ids.size()) +
                                 " != rewrite_titles count " + std::to_string(r.titles.size()) +
                                 "; profile excluded",
                             json{{"row", r.row}, {"userid", r.user_id}}});
            continue;
        }
        UserProfile u;
        u.user_id = r.user_id;
        u.click_history = r.clicks;
        for (const std::string& id : r.clicks)
            if (!corpus.count(id))
                diags.push_back({"warning", "dangling-reference", "click history id not in corpus",
                                 json{{"userid", r.user_id}, {"doc_id", id}}});
        for (size_t i = 0; i < r.pos_ids.size(); ++i) {
            if (!corpus.count(r.pos_ids[i]))
                diags.push_back({"warning", "dangling-reference", "gold reference doc not in corpus",
                                 json{{"userid", r.user_id}, {"doc_id", r.pos_ids[i]}}});
            u.gold_refs[r.pos_ids[i]] = r.titles[i];
        }
        users.push_back(std::move(u));
    }
    std::sort(users.begin(), users.end(),
              [](const UserProfile& a, const UserProfile& b) { return a.user_id < b.user_id; });
    return users;
}

// --- evaluation instances ------------------------------------------------

// One instance per corpus document with gold references from at least two
// users. Documents annotated by exactly one user are reported as skipped;
// unannotated documents are not evaluation candidates and stay silent.
inline std::vector<EvalInstance> build_eval_instances(const CorpusStore& corpus,
                                                      const std::vector<UserProfile>& users,
                                                      std::vector<Diagnostic>& diags) {
    std::vector<EvalInstance> out;
    for (const auto& [doc_id, doc] : corpus) {
        std::vector<std::pair<UserProfile, std::string>> annotators;
        for (const UserProfile& u : users) {
            auto it = u.gold_refs.find(doc_id);
            if (it != u.gold_refs.end()) annotators.emplace_back(u, it->second);
        }
        if (annotators.empty()) continue;
        if (annotators.size() < 2) {
            diags.push_back({"warning", "instance-skipped",
                             "document has fewer than 2 gold references",
                             json{{"doc_id", doc_id}, {"references", annotators.size()}}});
            continue;
        }
        EvalInstance inst;
        inst.query_doc = doc;
        inst.users = std::move(annotators);  // users arrive sorted by user_id
        out.push_back(std::move(inst));
    }
    return out;
}

// --- contrastive pair sampling -------------------------------------------

namespace detail {

// Portable uniform index in [0, n): plain modulo reduction over mt19937_64.
// std::uniform_int_distribution is implementation-defined, which would break
// cross-toolchain reproducibility of seeded sampling.
inline size_t rng_index(std::mt19937_64& rng, size_t n) { return static_cast<size_t>(rng() % n); }

template <typename T>
inline void seeded_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng_index(rng, i)]);
}

}  // namespace detail

// Up to pairs_per_doc unordered user pairs per instance, chosen with a
// per-document seed so that adding documents never reshuffles existing ones.
// Shared example docs are the documents (other than the query) for which both
// users hold a gold reference.
inline std::vector<ContrastiveSample> sample_contrastive_pairs(const std::vector<EvalInstance>& instances,
                                                               const CorpusStore& corpus,
                                                               uint64_t rng_seed, size_t pairs_per_doc) {
    std::vector<ContrastiveSample> out;
    for (const EvalInstance& inst : instances) {
        std::vector<std::pair<size_t, size_t>> pairs;
        for (size_t a = 0; a < inst.users.size(); ++a)
            for (size_t b = a + 1; b < inst.users.size(); ++b) pairs.emplace_back(a, b);
        if (pairs.size() > pairs_per_doc) {
            std::mt19937_64 rng(rng_seed ^ fnv1a64(inst.query_doc.doc_id));
            detail::seeded_shuffle(pairs, rng);
            pairs.resize(pairs_per_doc);
            std::sort(pairs.begin(), pairs.end());
        }
        for (auto [a, b] : pairs) {
            ContrastiveSample s;
            s.query_doc = inst.query_doc;
            s.user_pair = {inst.users[a].first, inst.users[b].first};
            const UserProfile& u1 = s.user_pair.first;
            const UserProfile& u2 = s.user_pair.second;
            for (const auto& [doc_id, ref1] : u1.gold_refs) {
                if (doc_id == inst.query_doc.doc_id) continue;
                auto it2 = u2.gold_refs.find(doc_id);
                if (it2 == u2.gold_refs.end()) continue;
                auto itd = corpus.find(doc_id);
                if (itd == corpus.end()) continue;  // dangling refs already diagnosed at parse
                s.shared_example_docs.push_back({itd->second, ref1, it2->second});
            }
            s.no_shared_examples = s.shared_example_docs.empty();
            out.push_back(std::move(s));
        }
    }
    return out;
}

// --- serialization --------------------------------------------------------

inline json document_to_json(const Document& d) {
    return json{{"doc_id", d.doc_id}, {"title", d.title}, {"body", d.body}, {"category", d.category}};
}

inline Document document_from_json(const json& j) {
    return Document{j.at("doc_id"), j.value("title", ""), j.value("body", ""), j.value("category", "")};
}

inline json user_to_json(const UserProfile& u) {
    json pos = json::array(), titles = json::array();
    for (const auto& [doc_id, ref] : u.gold_refs) {
        pos.push_back(doc_id);
        titles.push_back(ref);
    }
    return json{{"userid", u.user_id},
                {"clicknewsID", u.click_history},
                {"posnewID", pos},
                {"rewrite_titles", titles}};
}

inline UserProfile user_from_json(const json& j) {
    UserProfile u;
    u.user_id = j.at("userid");
    for (const json& e : j.at("clicknewsID")) u.click_history.push_back(e.get<std::string>());
    const json& pos = j.at("posnewID");
    const json& titles = j.at("rewrite_titles");
    if (pos.size() != titles.size())
        throw std::runtime_error("user " + u.user_id + ": posnewID/rewrite_titles size mismatch");
    for (size_t i = 0; i < pos.size(); ++i)
        u.gold_refs[pos[i].get<std::string>()] = titles[i].get<std::string>();
    return u;
}

inline json instance_to_json(const EvalInstance& inst) {
    json users = json::array();
    for (const auto& [u, ref] : inst.users) {
        // the full annotation map rides along: prompt rendering draws example
        // documents from the user's other references
        json pos = json::array(), titles = json::array();
        for (const auto& [doc_id, r] : u.gold_refs) {
            pos.push_back(doc_id);
            titles.push_back(r);
        }
        users.push_back(json{{"user_id", u.user_id},
                             {"gold_ref", ref},
                             {"click_history", u.click_history},
                             {"posnewID", pos},
                             {"rewrite_titles", titles}});
    }
    json j = document_to_json(inst.query_doc);
    j["users"] = users;
    return j;
}

inline EvalInstance instance_from_json(const json& j) {
    EvalInstance inst;
    inst.query_doc = document_from_json(j);
    for (const json& ju : j.at("users")) {
        UserProfile u;
        u.user_id = ju.at("user_id");
        for (const json& e : ju.value("click_history", json::array()))
            u.click_history.push_back(e.get<std::string>());
        std::string ref = ju.at("gold_ref");
        const json& pos = ju.value("posnewID", json::array());
        const json& titles = ju.value("rewrite_titles", json::array());
        if (pos.size() != titles.size())
            throw std::runtime_error("user " + u.user_id + ": posnewID/rewrite_titles size mismatch");
        for (size_t i = 0; i < pos.size(); ++i)
            u.gold_refs[pos[i].get<std::string>()] = titles[i].get<std::string>();
        u.gold_refs[inst.query_doc.doc_id] = ref;
        inst.users.emplace_back(std::move(u), std::move(ref));
    }
    return inst;
}

inline json sample_to_json(const ContrastiveSample& s) {
    json users = json::array();
    for (const UserProfile* u : {&s.user_pair.first, &s.user_pair.second}) {
        auto it = u->gold_refs.find(s.query_doc.doc_id);
        users.push_back(json{{"user_id", u->user_id},
                             {"click_history", u->click_history},
                             {"query_ref", it != u->gold_refs.end() ? it->second : ""}});
    }
    json shared = json::array();
    for (const SharedExample& e : s.shared_example_docs)
        shared.push_back(json{{"doc_id", e.doc.doc_id}, {"ref_user1", e.ref_user1}, {"ref_user2", e.ref_user2}});
    return json{{"doc_id", s.query_doc.doc_id},
                {"users", users},
                {"shared_examples", shared},
                {"perturbation_tag", perturbation_tag_name(s.perturbation_tag)},
                {"no_shared_examples", s.no_shared_examples}};
}

inline ContrastiveSample sample_from_json(const json& j, const CorpusStore& corpus) {
    ContrastiveSample s;
    const std::string doc_id = j.at("doc_id");
    auto itd = corpus.find(doc_id);
    if (itd == corpus.end()) throw std::runtime_error("sample references unknown doc_id: " + doc_id);
    s.query_doc = itd->second;
    const json& users = j.at("users");
    if (users.size() != 2) throw std::runtime_error("sample must carry exactly 2 users");
    UserProfile* slots[2] = {&s.user_pair.first, &s.user_pair.second};
    for (size_t i = 0; i < 2; ++i) {
        UserProfile& u = *slots[i];
        u.user_id = users[i].at("user_id");
        for (const json& e : users[i].at("click_history")) u.click_history.push_back(e.get<std::string>());
        u.gold_refs[doc_id] = users[i].at("query_ref");
    }
    for (const json& je : j.at("shared_examples")) {
        const std::string ex_id = je.at("doc_id");
        auto ite = corpus.find(ex_id);
        if (ite == corpus.end()) throw std::runtime_error("sample references unknown example doc: " + ex_id);
        SharedExample e{ite->second, je.at("ref_user1"), je.at("ref_user2")};
        s.user_pair.first.gold_refs[ex_id] = e.ref_user1;
        s.user_pair.second.gold_refs[ex_id] = e.ref_user2;
        s.shared_example_docs.push_back(std::move(e));
    }
    s.perturbation_tag = perturbation_tag_from_name(j.value("perturbation_tag", "genuine"));
    s.no_shared_examples = j.value("no_shared_examples", s.shared_example_docs.empty());
    return s;
}

inline void write_diagnostics(const std::string& path, const std::vector<Diagnostic>& diags) {
    std::vector<json> rows;
    rows.reserve(diags.size());
    for (const Diagnostic& d : diags) rows.push_back(d.to_json());
    write_jsonl(path, rows);
}

}  // namespace icpl
