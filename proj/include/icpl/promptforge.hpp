#pragma once

// Prompt construction under fixed token budgets.
//
// Every style fits the same 3700-token envelope, split per section:
//
//   style               history/user  example(each)  article
//   zero_shot                1200           -          2500
//   c_zero_shot              1000 x2        -          1700
//   two_shot_no_hist            -          950 x2      1800
//   c_two_shot_no_hist          -          950 x2      1800
//   two_shot_hist            1200          600 x2      1300
//   c_two_shot_hist           850 x2       450 x2      1100
//
// Sections are rendered in a fixed order (task preamble, histories, examples,
// query article, output-format instruction) and are truncated independently
// before concatenation. Truncation drops the tail by default, preserving the
// task preamble and the earliest history clicks. The preamble and instruction
// carry no section budget of their own but count toward the total; the
// article budget shrinks when needed so the total always holds.

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "style.hpp"
#include "textdist.hpp"
#include "util.hpp"

namespace icpl {

struct PromptBudget {
    size_t history_tokens = 0;  // per history section
    size_t example_tokens = 0;  // per example section
    size_t article_tokens = 0;
    size_t total_tokens = 3700;
    size_t history_slots = 0;
    size_t example_slots = 0;
};

inline PromptBudget budget_for(PromptStyle style) {
    switch (style) {
        case PromptStyle::zero_shot:          return {1200, 0, 2500, 3700, 1, 0};
        case PromptStyle::c_zero_shot:        return {1000, 0, 1700, 3700, 2, 0};
        case PromptStyle::two_shot_no_hist:   return {0, 950, 1800, 3700, 0, 2};
        case PromptStyle::c_two_shot_no_hist: return {0, 950, 1800, 3700, 0, 2};
        case PromptStyle::two_shot_hist:      return {1200, 600, 1300, 3700, 1, 2};
        case PromptStyle::c_two_shot_hist:    return {850, 450, 1100, 3700, 2, 2};
    }
    throw std::logic_error("budget_for: unreachable");
}

// --- templates -------------------------------------------------------------

// Template files are plain text; a line "@name" opens a named block holding
// everything up to the next "@" line. Blocks contain {{slot}} placeholders.
struct TemplateSet {
    std::map<std::string, std::string> blocks;

    static TemplateSet parse(const std::string& text) {
        TemplateSet t;
        std::string name;
        std::vector<std::string> acc;
        auto flush = [&] {
            if (name.empty()) return;
            while (!acc.empty() && acc.back().empty()) acc.pop_back();
            t.blocks[name] = join(acc, "\n");
            acc.clear();
        };
        for (std::string& line : split(text, '\n')) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty() && line[0] == '@') {
                flush();
                name = trim(line.substr(1));
            } else if (!name.empty()) {
                acc.push_back(line);
            }
        }
        flush();
        static const char* required[] = {
            "preamble_plain",   "preamble_contrastive", "history_header",
            "history_item",     "example_header",       "example_ref_plain",
            "example_ref_contrastive", "article",       "instruction_plain",
            "instruction_contrastive",
        };
        for (const char* r : required)
            if (!t.blocks.count(r)) throw std::runtime_error(std::string("template set missing block: ") + r);
        return t;
    }

    static TemplateSet load(const std::string& path) { return parse(read_file(path)); }
    static const TemplateSet& default_set();

    std::string block(const std::string& name) const { return blocks.at(name); }
};

inline constexpr const char* default_template_text = R"TPL(@preamble_plain
[TASK]
Write a personalized news headline for the reader profiled below. Use the profile to decide what this reader cares about.
@preamble_contrastive
[TASK]
Write personalized news headlines for the two readers profiled below. Their interests differ; each headline must reflect its own reader.
@history_header
[HISTORY {{user_slot}}: {{user_id}}]
Clicked article titles, oldest first:
@history_item
- {{title}}
@example_header
[EXAMPLE {{index}}]
Title: {{title}}
{{body}}
@example_ref_plain
HEADLINE: {{ref}}
@example_ref_contrastive
HEADLINE {{user_slot}}: {{ref}}
@article
[ARTICLE]
Title: {{title}}
{{body}}
@instruction_plain
[OUTPUT]
Write the headline {{user_slot}} would want for the article above.
Answer exactly as: HEADLINE: <headline>
@instruction_contrastive
[OUTPUT]
Write the headline each reader would want for the article above.
Answer with one line per reader, exactly as:
HEADLINE User1: <headline for User1>
HEADLINE User2: <headline for User2>
)TPL";

inline const TemplateSet& TemplateSet::default_set() {
    static const TemplateSet t = TemplateSet::parse(default_template_text);
    return t;
}

inline std::string fill(std::string tpl, const std::map<std::string, std::string>& slots) {
    for (const auto& [k, v] : slots) {
        const std::string pat = "{{" + k + "}}";
        size_t pos = 0;
        while ((pos = tpl.find(pat, pos)) != std::string::npos) {
            tpl.replace(pos, pat.size(), v);
            pos += v.size();
        }
    }
    return tpl;
}

// --- rendered prompts --------------------------------------------------------

struct RenderedPrompt {
    std::string prompt_id;
    PromptStyle style = PromptStyle::zero_shot;
    std::string doc_id;
    std::vector<std::string> user_ids;
    std::string text;
    std::map<std::string, size_t> section_token_counts;
    std::map<std::string, size_t> truncation_report;  // section -> tokens dropped
    PerturbationTag perturbation_tag = PerturbationTag::genuine;
};

inline json prompt_to_json(const RenderedPrompt& p) {
    return json{{"prompt_id", p.prompt_id},
                {"style", style_name(p.style)},
                {"doc_id", p.doc_id},
                {"user_ids", p.user_ids},
                {"text", p.text},
                {"section_token_counts", p.section_token_counts},
                {"truncation_report", p.truncation_report},
                {"perturbation_tag", perturbation_tag_name(p.perturbation_tag)}};
}

inline RenderedPrompt prompt_from_json(const json& j) {
    RenderedPrompt p;
    p.prompt_id = j.at("prompt_id");
    p.style = style_from_name(j.at("style"));
    p.doc_id = j.at("doc_id");
    for (const json& e : j.at("user_ids")) p.user_ids.push_back(e.get<std::string>());
    p.text = j.at("text");
    for (auto& [k, v] : j.at("section_token_counts").items())
        p.section_token_counts[k] = v.get<size_t>();
    for (auto& [k, v] : j.at("truncation_report").items()) p.truncation_report[k] = v.get<size_t>();
    p.perturbation_tag = perturbation_tag_from_name(j.value("perturbation_tag", "genuine"));
    return p;
}

// --- the forge ---------------------------------------------------------------

struct ForgeOptions {
    std::map<PromptStyle, PromptBudget> budget_overrides;
    TokenizerScheme budget_tokenizer = TokenizerScheme::budget();
    bool drop_tail = true;  // false flips to head-truncation (keep the tail)
};

class PromptForge {
public:
    PromptForge(const CorpusStore& corpus, TemplateSet templates = TemplateSet::default_set(),
                ForgeOptions opt = {})
        : corpus_(corpus), tpl_(std::move(templates)), opt_(std::move(opt)) {}

    PromptBudget budget(PromptStyle style) const {
        auto it = opt_.budget_overrides.find(style);
        return it != opt_.budget_overrides.end() ? it->second : budget_for(style);
    }

    // Plain styles: one target user, examples drawn from that user's other
    // annotated documents (sorted by doc_id, first two).
    RenderedPrompt render_plain(PromptStyle style, const UserProfile& user,
                                const EvalInstance& inst) const {
        if (is_contrastive(style))
            throw std::invalid_argument("render_plain: contrastive style " + style_name(style));
        Builder b(*this, style, inst.query_doc);
        b.prompt.user_ids = {user.user_id};
        b.add_preamble(tpl_.block("preamble_plain"));
        if (has_history(style)) b.add_history(1, user);
        if (has_examples(style)) {
            std::vector<std::pair<const Document*, std::vector<std::string>>> examples;
            for (const auto& [doc_id, ref] : user.gold_refs) {
                if (doc_id == inst.query_doc.doc_id) continue;
                auto it = corpus_.find(doc_id);
                if (it == corpus_.end()) continue;
                examples.push_back({&it->second, {fill(tpl_.block("example_ref_plain"), {{"ref", ref}})}});
                if (examples.size() == 2) break;
            }
            if (examples.size() < 2)
                throw std::runtime_error("two-shot style needs 2 example documents for user '" +
                                         user.user_id + "' (query doc '" + inst.query_doc.doc_id + "')");
            for (size_t i = 0; i < 2; ++i) b.add_example(i + 1, *examples[i].first, examples[i].second);
        }
        b.add_article();
        b.add_instruction(fill(tpl_.block("instruction_plain"), {{"user_slot", "User1"}}));
        return b.finish();
    }

    // Contrastive styles: both users of the sampled pair in one prompt.
    RenderedPrompt render_contrastive(PromptStyle style, const ContrastiveSample& sample) const {
        if (!is_contrastive(style))
            throw std::invalid_argument("render_contrastive: plain style " + style_name(style));
        Builder b(*this, style, sample.query_doc);
        const UserProfile& u1 = sample.user_pair.first;
        const UserProfile& u2 = sample.user_pair.second;
        b.prompt.user_ids = {u1.user_id, u2.user_id};
        b.add_preamble(tpl_.block("preamble_contrastive"));
        if (has_history(style)) {
            b.add_history(1, u1);
            b.add_history(2, u2);
        }
        if (has_examples(style)) {
            if (sample.shared_example_docs.size() < 2)
                throw std::runtime_error("two-shot contrastive style needs 2 shared example documents for pair (" +
                                         u1.user_id + ", " + u2.user_id + ") on doc '" +
                                         sample.query_doc.doc_id + "'");
            for (size_t i = 0; i < 2; ++i) {
                const SharedExample& e = sample.shared_example_docs[i];
                if (e.doc.doc_id == sample.query_doc.doc_id)
                    throw std::logic_error("example document equals query document: " + e.doc.doc_id);
                b.add_example(i + 1, e.doc,
                              {fill(tpl_.block("example_ref_contrastive"),
                                    {{"user_slot", "User1"}, {"ref", e.ref_user1}}),
                               fill(tpl_.block("example_ref_contrastive"),
                                    {{"user_slot", "User2"}, {"ref", e.ref_user2}})});
            }
        }
        b.add_article();
        b.add_instruction(tpl_.block("instruction_contrastive"));
        return b.finish();
    }

private:
    struct Builder {
        const PromptForge& forge;
        PromptStyle style;
        const Document& query;
        PromptBudget bud;
        RenderedPrompt prompt;
        std::vector<std::pair<std::string, std::string>> sections;  // (name, text)
        std::string instruction_text;

        Builder(const PromptForge& f, PromptStyle s, const Document& q)
            : forge(f), style(s), query(q), bud(f.budget(s)) {
            prompt.style = s;
            prompt.doc_id = q.doc_id;
            if (q.body.empty())
                throw std::invalid_argument("query document '" + q.doc_id + "' has empty body");
        }

        size_t count(const std::string& s) const { return count_tokens(s, forge.opt_.budget_tokenizer); }

        std::string clip(const std::string& s, size_t limit, const std::string& section) {
            size_t n = count(s);
            if (n <= limit) return s;
            prompt.truncation_report[section] += n - limit;
            return forge.opt_.drop_tail ? truncate_to_budget(s, limit, forge.opt_.budget_tokenizer)
                                        : truncate_keep_tail(s, limit, forge.opt_.budget_tokenizer);
        }

        void push(const std::string& name, std::string text) {
            prompt.section_token_counts[name] = count(text);
            sections.emplace_back(name, std::move(text));
        }

        void add_preamble(const std::string& text) { push("preamble", text); }

        void add_history(size_t slot, const UserProfile& user) {
            const std::string slot_name = "User" + std::to_string(slot);
            std::vector<std::string> lines;
            lines.push_back(fill(forge.tpl_.block("history_header"),
                                 {{"user_slot", slot_name}, {"user_id", user.user_id}}));
            for (const std::string& doc_id : user.click_history) {
                auto it = forge.corpus_.find(doc_id);
                if (it == forge.corpus_.end()) continue;  // dangling ids are diagnosed at ingest
                lines.push_back(fill(forge.tpl_.block("history_item"), {{"title", it->second.title}}));
            }
            const std::string name = "history_user" + std::to_string(slot);
            push(name, clip(join(lines, "\n"), bud.history_tokens, name));
        }

        // Reference lines are the labels of the example; the body yields to
        // them, so an example keeps its headline(s) under truncation.
        void add_example(size_t index, const Document& doc, const std::vector<std::string>& ref_lines) {
            const std::string name = "example_" + std::to_string(index);
            std::string head = fill(forge.tpl_.block("example_header"),
                                    {{"index", std::to_string(index)}, {"title", doc.title}});
            std::string base = fill(head, {{"body", ""}}) + "\n" + join(ref_lines, "\n");
            size_t base_tokens = count(base);
            size_t body_budget = bud.example_tokens > base_tokens ? bud.example_tokens - base_tokens : 0;
            size_t body_tokens = count(doc.body);
            if (body_tokens > body_budget) prompt.truncation_report[name] += body_tokens - body_budget;
            std::string body = forge.opt_.drop_tail
                                   ? truncate_to_budget(doc.body, body_budget, forge.opt_.budget_tokenizer)
                                   : truncate_keep_tail(doc.body, body_budget, forge.opt_.budget_tokenizer);
            std::string text = fill(head, {{"body", body}}) + "\n" + join(ref_lines, "\n");
            if (count(text) > bud.example_tokens) text = clip(text, bud.example_tokens, name);
            push(name, std::move(text));
        }

        void add_instruction(std::string text) { instruction_text = std::move(text); }

        void add_article() { /* placed by finish(), after the instruction is known */ }

        RenderedPrompt finish() {
            // The article budget shrinks if the unbudgeted sections (preamble,
            // instruction) would push the total past the envelope.
            size_t used = count(instruction_text);
            for (const auto& [name, text] : sections) used += prompt.section_token_counts.at(name);
            size_t room = bud.total_tokens > used ? bud.total_tokens - used : 0;
            size_t article_budget = std::min(bud.article_tokens, room);
            if (article_budget < bud.article_tokens)
                prompt.truncation_report["article_budget_shrink"] = bud.article_tokens - article_budget;

            std::string head = fill(forge.tpl_.block("article"), {{"title", query.title}});
            std::string base = fill(head, {{"body", ""}});
            size_t base_tokens = count(base);
            size_t body_budget = article_budget > base_tokens ? article_budget - base_tokens : 0;
            size_t body_tokens = count(query.body);
            if (body_tokens > body_budget) prompt.truncation_report["article"] += body_tokens - body_budget;
            std::string body = forge.opt_.drop_tail
                                   ? truncate_to_budget(query.body, body_budget, forge.opt_.budget_tokenizer)
                                   : truncate_keep_tail(query.body, body_budget, forge.opt_.budget_tokenizer);
            std::string article = fill(head, {{"body", body}});
            if (count(article) > article_budget && article_budget > 0)
                article = clip(article, article_budget, "article");
            push("article", std::move(article));
            push("instruction", instruction_text);

            std::vector<std::string> parts;
            parts.reserve(sections.size());
            for (auto& [name, text] : sections) parts.push_back(std::move(text));
            prompt.text = join(parts, "\n\n");
            prompt.prompt_id = style_name(style) + "|" + prompt.doc_id + "|" + join(prompt.user_ids, "+");
            return prompt;
        }
    };

    const CorpusStore& corpus_;
    TemplateSet tpl_;
    ForgeOptions opt_;
};

// --- dataset construction ------------------------------------------------------

struct PromptDataset {
    std::vector<RenderedPrompt> records;
    json manifest;  // per-style counts, truncation stats, render errors
};

inline PromptDataset build_prompt_dataset(const std::vector<EvalInstance>& instances,
                                          const std::vector<ContrastiveSample>& samples,
                                          const std::vector<PromptStyle>& styles,
                                          const PromptForge& forge) {
    PromptDataset out;
    json per_style = json::object();
    json errors = json::array();
    for (PromptStyle style : styles) {
        size_t rendered = 0, failed = 0, sections_truncated = 0, tokens_dropped = 0;
        auto account = [&](const RenderedPrompt& p) {
            ++rendered;
            for (const auto& [sec, dropped] : p.truncation_report) {
                (void)sec;
                ++sections_truncated;
                tokens_dropped += dropped;
            }
            out.records.push_back(p);
        };
        if (!is_contrastive(style)) {
            for (const EvalInstance& inst : instances)
                for (const auto& [user, ref] : inst.users) {
                    (void)ref;
                    try {
                        account(forge.render_plain(style, user, inst));
                    } catch (const std::exception& e) {
                        ++failed;
                        errors.push_back(json{{"style", style_name(style)},
                                              {"doc_id", inst.query_doc.doc_id},
                                              {"user_id", user.user_id},
                                              {"error", e.what()}});
                    }
                }
        } else {
            for (const ContrastiveSample& s : samples) {
                try {
                    account(forge.render_contrastive(style, s));
                } catch (const std::exception& e) {
                    ++failed;
                    errors.push_back(json{{"style", style_name(style)},
                                          {"doc_id", s.query_doc.doc_id},
                                          {"user_id", s.user_pair.first.user_id + "+" + s.user_pair.second.user_id},
                                          {"error", e.what()}});
                }
            }
        }
        per_style[style_name(style)] = json{{"rendered", rendered},
                                            {"failed", failed},
                                            {"sections_truncated", sections_truncated},
                                            {"tokens_dropped", tokens_dropped}};
    }
    std::stable_sort(out.records.begin(), out.records.end(),
                     [](const RenderedPrompt& a, const RenderedPrompt& b) { return a.prompt_id < b.prompt_id; });
    out.manifest = json{{"styles", per_style}, {"render_errors", errors}, {"records", out.records.size()}};
    return out;
}

// --- adversarial perturbation ---------------------------------------------------

// Replaces user 2's profile sections with noise: the click history of another
// user, and each example headline of user 2 with a headline some other user
// wrote for some other article. Both donor pools exclude the pair's own
// users. The query gold references and all of user 1 stay untouched.
inline ContrastiveSample adversarial_perturb(const ContrastiveSample& sample,
                                             const std::vector<UserProfile>& pool, uint64_t rng_seed) {
    if (sample.perturbation_tag != PerturbationTag::genuine)
        throw std::invalid_argument("adversarial_perturb: sample is already perturbed");
    const std::string& id1 = sample.user_pair.first.user_id;
    const std::string& id2 = sample.user_pair.second.user_id;

    std::vector<const UserProfile*> donors;
    for (const UserProfile& u : pool)
        if (u.user_id != id1 && u.user_id != id2) donors.push_back(&u);
    std::sort(donors.begin(), donors.end(),
              [](const UserProfile* a, const UserProfile* b) { return a->user_id < b->user_id; });
    if (donors.empty())
        throw std::runtime_error("adversarial_perturb: pool has no user outside the pair");

    std::mt19937_64 rng(rng_seed);
    ContrastiveSample out = sample;
    out.perturbation_tag = PerturbationTag::adversarial;
    out.user_pair.second.click_history = donors[detail::rng_index(rng, donors.size())]->click_history;

    for (SharedExample& ex : out.shared_example_docs) {
        std::vector<std::pair<std::string, std::string>> headlines;  // (sort key, headline)
        for (const UserProfile* u : donors)
            for (const auto& [doc_id, ref] : u->gold_refs)
                if (doc_id != ex.doc.doc_id && doc_id != sample.query_doc.doc_id)
                    headlines.emplace_back(u->user_id + "|" + doc_id, ref);
        if (headlines.empty())
            throw std::runtime_error("adversarial_perturb: no donor headline available for example doc '" +
                                     ex.doc.doc_id + "'");
        ex.ref_user2 = headlines[detail::rng_index(rng, headlines.size())].second;
    }
    return out;
}

}  // namespace icpl
