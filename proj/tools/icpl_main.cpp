// icpl: measure in-context personalization of summarization models.
//
// Pipeline commands chain through artifacts in --out-dir:
//   ingest -> build-prompts -> collect -> score -> probe / report
// plus adversarial (profile-swap validation), hj-score (human ratings in
// place of text divergence), and selftest.

#include <CLI11.hpp>

#include <cctype>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <set>

#include "icpl/corpus.hpp"
#include "icpl/egises.hpp"
#include "icpl/genbridge.hpp"
#include "icpl/http_client.hpp"
#include "icpl/oracles.hpp"
#include "icpl/probes.hpp"
#include "icpl/promptforge.hpp"
#include "icpl/runconfig.hpp"
#include "icpl/textdist.hpp"
#include "icpl/version.hpp"

namespace fs = std::filesystem;
using namespace icpl;

namespace {

std::string safe_name(const std::string& s) {
    std::string out;
    for (char c : s)
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') ? c : '_';
    return out;
}

CorpusFormat format_for(const std::string& path) {
    return path.size() >= 6 && path.rfind(".jsonl") == path.size() - 6 ? CorpusFormat::jsonl
                                                                       : CorpusFormat::tsv;
}

struct Inputs {
    CorpusStore corpus;
    std::vector<UserProfile> users;
    std::map<std::string, UserProfile> users_by_id;
    std::vector<EvalInstance> instances;
    std::vector<Diagnostic> diags;
};

Inputs load_inputs(const RunConfig& cfg) {
    if (cfg.corpus_path.empty())
        throw std::runtime_error("corpus path required (--corpus, config file, or ICPL_CORPUS)");
    if (cfg.users_path.empty())
        throw std::runtime_error("users path required (--users, config file, or ICPL_USERS)");
    Inputs in;
    in.corpus = parse_news_corpus(cfg.corpus_path, format_for(cfg.corpus_path), in.diags);
    in.users = parse_user_table(cfg.users_path, format_for(cfg.users_path), in.corpus, in.diags);
    for (const UserProfile& u : in.users) in.users_by_id[u.user_id] = u;
    in.instances = build_eval_instances(in.corpus, in.users, in.diags);
    if (cfg.max_docs > 0 && in.instances.size() > static_cast<size_t>(cfg.max_docs)) {
        std::mt19937_64 rng(cfg.seed ^ fnv1a64("max_docs"));
        detail::seeded_shuffle(in.instances, rng);
        in.instances.resize(static_cast<size_t>(cfg.max_docs));
        std::sort(in.instances.begin(), in.instances.end(),
                  [](const EvalInstance& a, const EvalInstance& b) {
                      return a.query_doc.doc_id < b.query_doc.doc_id;
                  });
    }
    return in;
}

std::vector<EvalInstance> load_instances(const RunConfig& cfg) {
    const std::string path = cfg.out_dir + "/instances.jsonl";
    if (!fs::exists(path)) throw std::runtime_error(path + " not found; run `icpl ingest` first");
    std::vector<EvalInstance> out;
    for (const json& j : read_jsonl(path)) out.push_back(instance_from_json(j));
    return out;
}

std::vector<ContrastiveSample> load_pairs(const RunConfig& cfg, const CorpusStore& corpus) {
    const std::string path = cfg.out_dir + "/pairs.jsonl";
    if (!fs::exists(path)) throw std::runtime_error(path + " not found; run `icpl ingest` first");
    std::vector<ContrastiveSample> out;
    for (const json& j : read_jsonl(path)) out.push_back(sample_from_json(j, corpus));
    return out;
}

std::vector<RenderedPrompt> load_prompts(const RunConfig& cfg) {
    const std::string path = cfg.out_dir + "/prompts.jsonl";
    if (!fs::exists(path)) throw std::runtime_error(path + " not found; run `icpl build-prompts` first");
    std::vector<RenderedPrompt> out;
    for (const json& j : read_jsonl(path)) out.push_back(prompt_from_json(j));
    return out;
}

// checkpoint files carry a header line that is not a generation record
std::vector<GenerationRecord> load_generations(const std::string& path) {
    if (!fs::exists(path)) throw std::runtime_error(path + " not found; run `icpl collect` first");
    std::vector<GenerationRecord> out;
    for (const json& j : read_jsonl(path)) {
        if (j.contains("checkpoint_version")) continue;
        out.push_back(generation_from_json(j));
    }
    return out;
}

std::string resolve_model_label(const RunConfig& cfg) {
    if (cfg.adapter == "oracle" && cfg.model_id == "oracle")
        return OracleModel::parse(cfg.oracle, cfg.seed).name();
    return cfg.model_id;
}

std::unique_ptr<CompletionClient> make_client(const RunConfig& cfg, const Inputs* inputs,
                                              const std::vector<RenderedPrompt>& prompts) {
    if (cfg.adapter == "playback") {
        if (cfg.playback_path.empty())
            throw std::runtime_error("playback adapter needs --playback <completions.jsonl>");
        return std::make_unique<PlaybackClient>(PlaybackClient::from_file(cfg.playback_path));
    }
    if (cfg.adapter == "http")
        return std::make_unique<HttpJsonClient>(
            HttpClientConfig{cfg.http_host, cfg.http_port, cfg.http_path, 60});
    if (cfg.adapter == "oracle") {
        OracleModel model = OracleModel::parse(cfg.oracle, cfg.seed);
        OracleContext ctx{&inputs->corpus, &inputs->users_by_id};
        return std::make_unique<OracleClient>(model, ctx, prompts);
    }
    throw std::invalid_argument("unknown adapter: " + cfg.adapter + " (oracle | playback | http)");
}

struct BuiltUnits {
    std::vector<ScoringUnit> units;
    size_t skipped = 0;
};

// Scoring units for one style from normalized rows: full instances for plain
// styles, sampled user pairs for contrastive ones. A unit missing any summary
// or tokenizing to an empty distribution is skipped, never partially scored.
BuiltUnits units_for_style(PromptStyle style, const std::vector<ScoringRow>& rows,
                           const std::vector<EvalInstance>& instances,
                           const std::vector<ContrastiveSample>& samples, const MetricConfig& mc) {
    const std::string sname = style_name(style);
    std::map<std::tuple<std::string, std::string, std::string>, std::string> by_key;
    for (const ScoringRow& r : rows)
        if (r.prompt_style == sname) by_key[{r.doc_id, r.pair_key, r.user_id}] = r.summary;

    BuiltUnits out;
    auto add_unit = [&](const Document& doc, const std::string& unit_key, const std::string& pair_key,
                        const std::vector<std::pair<std::string, std::string>>& user_refs) {
        ScoringUnit u;
        u.doc_id = doc.doc_id;
        u.unit_key = unit_key;
        u.doc = WordDistribution::from_text(doc.title + " " + doc.body, mc.tokenizer);
        for (const auto& [uid, ref] : user_refs) {
            auto it = by_key.find({doc.doc_id, pair_key, uid});
            if (it == by_key.end()) {
                ++out.skipped;
                return;
            }
            WordDistribution rd = WordDistribution::from_text(ref, mc.tokenizer);
            WordDistribution gd = WordDistribution::from_text(it->second, mc.tokenizer);
            if (rd.empty() || gd.empty()) {
                ++out.skipped;
                return;
            }
            u.users.push_back({uid, std::move(rd), std::move(gd)});
        }
        if (u.users.size() >= 2 && !u.doc.empty())
            out.units.push_back(std::move(u));
        else
            ++out.skipped;
    };

    if (!is_contrastive(style)) {
        for (const EvalInstance& inst : instances) {
            std::vector<std::pair<std::string, std::string>> user_refs;
            for (const auto& [user, ref] : inst.users) user_refs.emplace_back(user.user_id, ref);
            add_unit(inst.query_doc, inst.query_doc.doc_id, "", user_refs);
        }
    } else {
        for (const ContrastiveSample& s : samples) {
            const UserProfile& u1 = s.user_pair.first;
            const UserProfile& u2 = s.user_pair.second;
            auto r1 = u1.gold_refs.find(s.query_doc.doc_id);
            auto r2 = u2.gold_refs.find(s.query_doc.doc_id);
            if (r1 == u1.gold_refs.end() || r2 == u2.gold_refs.end()) {
                ++out.skipped;
                continue;
            }
            const std::string pair_key = u1.user_id + "+" + u2.user_id;
            add_unit(s.query_doc, s.query_doc.doc_id + "|" + pair_key, pair_key,
                     {{u1.user_id, r1->second}, {u2.user_id, r2->second}});
        }
    }
    return out;
}

// --- commands -------------------------------------------------------------

void cmd_ingest(const RunConfig& cfg) {
    Inputs in = load_inputs(cfg);
    std::vector<ContrastiveSample> samples =
        sample_contrastive_pairs(in.instances, in.corpus, cfg.seed, static_cast<size_t>(cfg.pairs_per_doc));
    fs::create_directories(cfg.out_dir);
    std::vector<json> inst_rows, pair_rows;
    for (const EvalInstance& i : in.instances) inst_rows.push_back(instance_to_json(i));
    for (const ContrastiveSample& s : samples) pair_rows.push_back(sample_to_json(s));
    write_jsonl(cfg.out_dir + "/instances.jsonl", inst_rows);
    write_jsonl(cfg.out_dir + "/pairs.jsonl", pair_rows);
    write_diagnostics(cfg.out_dir + "/diagnostics.jsonl", in.diags);
    json counts{{"documents", in.corpus.size()},
                {"users", in.users.size()},
                {"instances", in.instances.size()},
                {"contrastive_pairs", samples.size()},
                {"diagnostics", in.diags.size()}};
    write_file(cfg.out_dir + "/ingest_manifest.json",
               run_manifest(cfg, {{"corpus", cfg.corpus_path}, {"users", cfg.users_path}}, counts).dump(2) +
                   "\n");
    std::cout << "ingested " << in.corpus.size() << " documents, " << in.users.size() << " users -> "
              << in.instances.size() << " instances, " << samples.size() << " contrastive pairs ("
              << in.diags.size() << " diagnostics)\n";
}

void cmd_build_prompts(const RunConfig& cfg) {
    Inputs in = load_inputs(cfg);
    std::vector<EvalInstance> instances = load_instances(cfg);
    std::vector<ContrastiveSample> samples = load_pairs(cfg, in.corpus);
    PromptForge forge(in.corpus);
    PromptDataset ds = build_prompt_dataset(instances, samples, cfg.style_list(), forge);
    fs::create_directories(cfg.out_dir);
    std::vector<json> rows;
    for (const RenderedPrompt& p : ds.records) rows.push_back(prompt_to_json(p));
    write_jsonl(cfg.out_dir + "/prompts.jsonl", rows);
    json manifest = run_manifest(cfg, {{"corpus", cfg.corpus_path}, {"users", cfg.users_path}},
                                 json{{"prompts", ds.records.size()}});
    manifest["dataset"] = ds.manifest;
    write_file(cfg.out_dir + "/prompts_manifest.json", manifest.dump(2) + "\n");
    std::cout << "rendered " << ds.records.size() << " prompts:\n";
    for (const auto& [style, stat] : ds.manifest.at("styles").items())
        std::cout << "  " << style << ": " << stat.at("rendered") << " rendered, " << stat.at("failed")
                  << " failed, " << stat.at("tokens_dropped") << " tokens truncated\n";
}

void cmd_collect(const RunConfig& cfg) {
    std::vector<RenderedPrompt> prompts = load_prompts(cfg);
    std::optional<Inputs> in;
    if (cfg.adapter == "oracle") in.emplace(load_inputs(cfg));
    std::unique_ptr<CompletionClient> client = make_client(cfg, in ? &*in : nullptr, prompts);

    const std::string label = resolve_model_label(cfg);
    const std::string safe = safe_name(label);
    fs::create_directories(cfg.out_dir);
    CollectConfig cc;
    cc.model_id = label;
    cc.decoding = cfg.decoding();
    cc.workers = static_cast<size_t>(std::max(cfg.workers, 1));
    cc.checkpoint_path = cfg.out_dir + "/completions_" + safe + ".jsonl";
    cc.audit_path = cfg.out_dir + "/collect_audit_" + safe + ".jsonl";
    CollectStats stats;
    collect(prompts, *client, cc, &stats);

    json counts{{"total", stats.total},       {"from_checkpoint", stats.from_checkpoint},
                {"requested", stats.requested}, {"matched", stats.matched},
                {"fallback", stats.fallback},   {"failed", stats.failed},
                {"retries", stats.retries}};
    json manifest = run_manifest(cfg, {{"corpus", cfg.corpus_path}, {"users", cfg.users_path}}, counts);
    manifest["model_id"] = label;
    manifest["checkpoint"] = cc.checkpoint_path;
    write_file(cfg.out_dir + "/collect_manifest_" + safe + ".json", manifest.dump(2) + "\n");
    std::cout << "collected " << stats.total << " completions for " << label << " ("
              << stats.from_checkpoint << " from checkpoint, " << stats.requested << " requested, "
              << stats.failed << " failed) -> " << cc.checkpoint_path << "\n";
}

void cmd_score(const RunConfig& cfg) {
    Inputs in = load_inputs(cfg);
    std::vector<EvalInstance> instances = load_instances(cfg);
    std::vector<ContrastiveSample> samples = load_pairs(cfg, in.corpus);
    std::vector<RenderedPrompt> prompts = load_prompts(cfg);
    const std::string label = resolve_model_label(cfg);
    const std::string safe = safe_name(label);
    std::vector<GenerationRecord> records =
        load_generations(cfg.out_dir + "/completions_" + safe + ".jsonl");
    size_t dropped = 0;
    std::vector<ScoringRow> rows = to_scoring_rows(prompts, records, {}, &dropped);
    std::vector<json> row_json;
    for (const ScoringRow& r : rows) row_json.push_back(scoring_row_to_json(r));
    write_jsonl(cfg.out_dir + "/scoring_rows_" + safe + ".jsonl", row_json);

    std::vector<PromptStyle> styles;
    if (!cfg.styles.empty()) {
        styles = cfg.style_list();
    } else {
        std::set<std::string> present;
        for (const ScoringRow& r : rows) present.insert(r.prompt_style);
        for (const std::string& s : present) styles.push_back(style_from_name(s));
    }

    const MetricConfig mc = cfg.metric_config();
    ScoreTable table;
    const std::string table_path = cfg.out_dir + "/score_table.csv";
    if (fs::exists(table_path)) table = ScoreTable::from_csv(table_path);
    table.provenance = "computed";

    json per_style = json::object();
    std::vector<json> detail_rows;
    for (PromptStyle style : styles) {
        BuiltUnits built = units_for_style(style, rows, instances, samples, mc);
        if (built.units.empty()) {
            per_style[style_name(style)] = json{{"scored", false}, {"skipped_units", built.skipped}};
            std::cout << label << " " << style_name(style) << ": no scoreable units\n";
            continue;
        }
        std::vector<SummaryScore> details;
        SystemScore sys =
            degress_system_units(built.units, label, style_name(style), mc,
                                 detail::distribution_pair_sigma(mc.divergence), &details,
                                 static_cast<size_t>(std::max(cfg.workers, 1)));
        const double tau_u = cfg.tau_u >= 0.0 ? cfg.tau_u : default_tau(built.units, mc.divergence);
        const double tau_s = cfg.tau_s >= 0.0 ? cfg.tau_s : tau_u;
        IcplVerdict verdict = classify_icpl(built.units, label, tau_u, tau_s, mc.divergence);
        per_style[style_name(style)] = json{{"scored", true},
                                            {"degress", sys.degress},
                                            {"egises", sys.egises},
                                            {"units", built.units.size()},
                                            {"skipped_units", built.skipped},
                                            {"icpl_weak", verdict.weak},
                                            {"icpl_strong", verdict.strong},
                                            {"tau_u", tau_u},
                                            {"tau_s", tau_s},
                                            {"icpl_violations", verdict.violations.size()}};
        for (const SummaryScore& d : details)
            detail_rows.push_back(json{{"style", style_name(style)},
                                       {"doc_id", d.doc_id},
                                       {"user_id", d.user_id},
                                       {"unit", d.unit_key},
                                       {"degress", d.degress}});
        table.scores[label][style] = sys.egises;
        std::cout << label << " " << style_name(style) << ": EGISES " << sys.egises << " (DEGRESS "
                  << sys.degress << ", " << built.units.size() << " units)\n";
    }

    write_file(table_path, table.to_csv());
    write_jsonl(cfg.out_dir + "/summary_scores_" + safe + ".jsonl", detail_rows);
    json scores{{"model_id", label}, {"styles", per_style}, {"dropped_rows", dropped}};
    write_file(cfg.out_dir + "/scores_" + safe + ".json", scores.dump(2) + "\n");
    json manifest = run_manifest(cfg, {{"corpus", cfg.corpus_path}, {"users", cfg.users_path}},
                                 json{{"scoring_rows", rows.size()}, {"dropped_rows", dropped}});
    manifest["model_id"] = label;
    write_file(cfg.out_dir + "/score_manifest_" + safe + ".json", manifest.dump(2) + "\n");
}

// table path shared by probe and report
std::string resolve_table_path(const RunConfig& cfg, const std::string& flag) {
    return flag.empty() ? cfg.out_dir + "/score_table.csv" : flag;
}

void cmd_probe(const RunConfig& cfg, const std::string& table_flag) {
    ScoreTable table = ScoreTable::from_csv(resolve_table_path(cfg, table_flag));
    std::vector<ParadoxRule> rules = rule_set(rule_set_from_name(cfg.rules));
    ParadoxMatrix matrix = detect_paradoxes(table, rules, cfg.rules);
    AggregateReport agg = aggregate_deltas(table, rules);
    fs::create_directories(cfg.out_dir);
    ReportFiles files = emit_report(table, matrix, agg);
    write_file(cfg.out_dir + "/paradox_matrix.csv", files.paradox_matrix_csv);
    write_file(cfg.out_dir + "/aggregates.json", files.aggregates_json);
    for (const ParadoxRule& r : rules) {
        size_t paradox = 0, evaluable = 0;
        for (const auto& [model, cells] : matrix.flags) {
            (void)model;
            auto it = cells.find(r.name);
            if (it == cells.end() || it->second == CellState::not_evaluable) continue;
            ++evaluable;
            if (it->second == CellState::paradox) ++paradox;
        }
        std::cout << r.name << " (" << style_name(r.poorer) << " -> " << style_name(r.richer) << "): "
                  << paradox << "/" << evaluable << " models paradoxical\n";
    }
}

void cmd_report(const RunConfig& cfg, const std::string& table_flag, const std::string& base_map_path) {
    ScoreTable table = ScoreTable::from_csv(resolve_table_path(cfg, table_flag));
    std::vector<ParadoxRule> rules = rule_set(rule_set_from_name(cfg.rules));
    ParadoxMatrix matrix = detect_paradoxes(table, rules, cfg.rules);
    AggregateReport agg = aggregate_deltas(table, rules);
    ReportOptions opts;
    if (!base_map_path.empty()) {
        for (const std::string& raw : split(read_file(base_map_path), '\n')) {
            std::string line = trim(raw);
            if (line.empty() || line[0] == '#') continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error(base_map_path + ": expected tuned=base, got: " + line);
            opts.base_model_map[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }
    }
    fs::create_directories(cfg.out_dir);
    ReportFiles files = emit_report(table, matrix, agg, opts);
    write_file(cfg.out_dir + "/leaderboard.md", files.leaderboard_md);
    write_file(cfg.out_dir + "/paradox_matrix.csv", files.paradox_matrix_csv);
    write_file(cfg.out_dir + "/aggregates.json", files.aggregates_json);
    std::vector<LeaderboardRow> rows = leaderboard(table);
    for (size_t i = 0; i < rows.size() && i < 10; ++i)
        std::cout << (i + 1) << ". " << rows[i].model_id << " (" << style_name(rows[i].best_style)
                  << "): " << rows[i].best_egises << "\n";
    std::cout << "wrote " << cfg.out_dir << "/leaderboard.md, paradox_matrix.csv, aggregates.json\n";
}

void cmd_adversarial(const RunConfig& cfg) {
    Inputs in = load_inputs(cfg);
    std::vector<ContrastiveSample> all = load_pairs(cfg, in.corpus);
    std::vector<ContrastiveSample> genuine;
    for (const ContrastiveSample& s : all)
        if (s.perturbation_tag == PerturbationTag::genuine) genuine.push_back(s);
    if (genuine.empty()) throw std::runtime_error("no genuine contrastive pairs in " + cfg.out_dir);

    std::vector<ContrastiveSample> perturbed;
    for (const ContrastiveSample& s : genuine)
        perturbed.push_back(adversarial_perturb(
            s, in.users,
            cfg.seed ^ fnv1a64(s.query_doc.doc_id + "|" + s.user_pair.first.user_id + "+" +
                               s.user_pair.second.user_id)));

    std::vector<PromptStyle> styles;
    for (PromptStyle s : cfg.style_list())
        if (is_contrastive(s)) styles.push_back(s);
    if (styles.empty()) throw std::runtime_error("adversarial validation needs a contrastive style");

    PromptForge forge(in.corpus);
    const MetricConfig mc = cfg.metric_config();
    const std::string label = resolve_model_label(cfg);
    fs::create_directories(cfg.out_dir);

    auto run_side = [&](const std::vector<ContrastiveSample>& side_samples, const std::string& side) {
        PromptDataset ds = build_prompt_dataset({}, side_samples, styles, forge);
        std::unique_ptr<CompletionClient> client = make_client(cfg, &in, ds.records);
        CollectConfig cc;
        cc.model_id = label;
        cc.decoding = cfg.decoding();
        cc.workers = static_cast<size_t>(std::max(cfg.workers, 1));
        cc.checkpoint_path = cfg.out_dir + "/completions_adversarial_" + side + "_" + safe_name(label) +
                             ".jsonl";
        std::vector<GenerationRecord> records = collect(ds.records, *client, cc);
        std::vector<ScoringRow> rows = to_scoring_rows(ds.records, records);
        json out = json::object();
        for (PromptStyle style : styles) {
            BuiltUnits built = units_for_style(style, rows, {}, side_samples, mc);
            if (built.units.empty()) continue;
            SystemScore sys = degress_system_units(built.units, label, style_name(style), mc,
                                                   detail::distribution_pair_sigma(mc.divergence), nullptr,
                                                   static_cast<size_t>(std::max(cfg.workers, 1)));
            out[style_name(style)] = json{{"egises", sys.egises}, {"units", built.units.size()}};
        }
        return out;
    };

    json gj = run_side(genuine, "genuine");
    json pj = run_side(perturbed, "perturbed");
    json styles_report = json::object();
    bool validation_passed = true;
    bool any = false;
    for (PromptStyle s : styles) {
        const std::string name = style_name(s);
        if (!gj.contains(name) || !pj.contains(name)) continue;
        any = true;
        const double ge = gj[name]["egises"], pe = pj[name]["egises"];
        const bool degraded = pe >= ge;
        validation_passed = validation_passed && degraded;
        styles_report[name] = json{{"genuine_egises", ge},
                                   {"perturbed_egises", pe},
                                   {"delta_pp", (pe - ge) * 100.0},
                                   {"degraded_or_equal", degraded}};
        std::cout << name << ": genuine EGISES " << ge << ", perturbed " << pe
                  << (degraded ? " (degraded as expected)" : " (UNEXPECTED improvement)") << "\n";
    }
    if (!any) throw std::runtime_error("adversarial validation scored no style on both sides");
    json report{{"model_id", label},
                {"pairs", genuine.size()},
                {"styles", styles_report},
                {"validation_passed", validation_passed}};
    write_file(cfg.out_dir + "/adversarial_report.json", report.dump(2) + "\n");
}

void cmd_hj_score(const RunConfig& cfg, const std::string& ratings_path, const std::string& export_path) {
    Inputs in = load_inputs(cfg);
    std::vector<EvalInstance> instances = load_instances(cfg);
    std::vector<ContrastiveSample> samples = load_pairs(cfg, in.corpus);
    std::vector<RenderedPrompt> prompts = load_prompts(cfg);
    std::vector<PromptStyle> styles = cfg.style_list();
    if (styles.size() != 1)
        throw std::runtime_error("hj-score scores one style at a time (--styles <style>)");
    const PromptStyle style = styles[0];
    const std::string label = resolve_model_label(cfg);
    const std::string safe = safe_name(label);
    std::vector<GenerationRecord> records =
        load_generations(cfg.out_dir + "/completions_" + safe + ".jsonl");
    std::vector<ScoringRow> rows = to_scoring_rows(prompts, records);
    const MetricConfig mc = cfg.metric_config();
    BuiltUnits built = units_for_style(style, rows, instances, samples, mc);
    if (built.units.empty())
        throw std::runtime_error("no scoreable units for style " + style_name(style));

    if (!export_path.empty()) {
        std::vector<json> need;
        for (const ScoringUnit& u : built.units)
            for (size_t j = 0; j < u.users.size(); ++j)
                for (size_t k = j + 1; k < u.users.size(); ++k)
                    for (const char* side : {"reference", "generated"})
                        need.push_back(json{{"doc_id", u.doc_id},
                                            {"side", side},
                                            {"a_id", u.users[j].user_id},
                                            {"b_id", u.users[k].user_id}});
        write_jsonl(export_path, need);
        std::cout << "wrote " << need.size() << " rating slots to " << export_path << "\n";
        return;
    }
    if (ratings_path.empty())
        throw std::runtime_error("hj-score needs --ratings <file>, or --export-pairs to list the slots");
    HJRatingSet ratings = HJRatingSet::from_jsonl(ratings_path);
    std::vector<SummaryScore> details;
    SystemScore sys = egises_hj(built.units, label, style_name(style), ratings, mc, &details);
    std::vector<json> detail_rows;
    for (const SummaryScore& d : details)
        detail_rows.push_back(json{{"doc_id", d.doc_id},
                                   {"user_id", d.user_id},
                                   {"unit", d.unit_key},
                                   {"degress", d.degress}});
    write_jsonl(cfg.out_dir + "/hj_summary_scores_" + safe + ".jsonl", detail_rows);
    json out{{"model_id", label},
             {"style", style_name(style)},
             {"degress", sys.degress},
             {"egises", sys.egises},
             {"units", built.units.size()}};
    write_file(cfg.out_dir + "/hj_scores_" + safe + ".json", out.dump(2) + "\n");
    std::cout << label << " " << style_name(style) << ": EGISES-HJ " << sys.egises << " over "
              << built.units.size() << " units\n";
}

// --- selftest ---------------------------------------------------------------

// small in-memory corpus: 4 documents, 4 users, refs on D1..D3
std::pair<CorpusStore, std::vector<UserProfile>> demo_corpus() {
    CorpusStore corpus;
    const char* fillers[4] = {
        "markets rallied after the central bank held rates steady while analysts debated whether "
        "inflation pressures would persist through the coming quarters and households adjusted "
        "spending plans accordingly across most regions",
        "engineers unveiled a modular battery design that swaps cells in minutes promising longer "
        "fleet uptime for delivery operators while regulators reviewed safety standards for road "
        "use in dense urban corridors nationwide",
        "researchers mapped coastal erosion patterns over three decades linking storm frequency to "
        "sediment loss and recommending managed retreat for several low lying settlements along "
        "the exposed shoreline communities there",
        "the city council approved a transit expansion adding two light rail lines and frequent "
        "bus corridors funded by a regional levy that voters narrowly passed after a contentious "
        "public campaign last autumn",
    };
    const char* titles[4] = {"rates hold steady", "swap battery fleet", "coast erosion study",
                             "transit plan passes"};
    for (int d = 0; d < 4; ++d) {
        std::string id = "D0" + std::to_string(d + 1);
        corpus[id] = Document{id, titles[d], fillers[d], "news"};
    }
    std::vector<UserProfile> users;
    const char* ref_words[4] = {"economy budget saver outlook", "gadget reviewer battery angle",
                                "climate policy watcher view", "commuter daily transit lens"};
    for (int u = 0; u < 4; ++u) {
        UserProfile p;
        p.user_id = "U" + std::to_string(u + 1);
        p.click_history = {"D04", "D0" + std::to_string((u % 3) + 1)};
        for (int d = 0; d < 3; ++d) {
            std::string id = "D0" + std::to_string(d + 1);
            p.gold_refs[id] = std::string(ref_words[u]) + " on " + corpus[id].title;
        }
        users.push_back(std::move(p));
    }
    return {std::move(corpus), std::move(users)};
}

// end-to-end in-memory run: render -> oracle completions -> rows -> units
std::map<PromptStyle, BuiltUnits> pipeline_units(const CorpusStore& corpus,
                                                 const std::vector<UserProfile>& users,
                                                 const std::vector<PromptStyle>& styles,
                                                 const OracleModel& model, uint64_t seed) {
    std::vector<Diagnostic> diags;
    std::vector<EvalInstance> instances = build_eval_instances(corpus, users, diags);
    std::vector<ContrastiveSample> samples = sample_contrastive_pairs(instances, corpus, seed, 3);
    PromptForge forge(corpus);
    PromptDataset ds = build_prompt_dataset(instances, samples, styles, forge);
    std::map<std::string, UserProfile> by_id;
    for (const UserProfile& u : users) by_id[u.user_id] = u;
    OracleContext ctx{&corpus, &by_id};
    OracleClient client(model, ctx, ds.records);
    CollectConfig cc;
    cc.model_id = model.name();
    cc.workers = 2;
    std::vector<GenerationRecord> records = collect(ds.records, client, cc);
    std::vector<ScoringRow> rows = to_scoring_rows(ds.records, records);
    std::map<PromptStyle, BuiltUnits> out;
    for (PromptStyle s : styles) out[s] = units_for_style(s, rows, instances, samples, MetricConfig{});
    return out;
}

int cmd_selftest(const RunConfig& cfg, size_t fixtures) {
    int failures = 0;
    auto check = [&](bool ok, const std::string& name, const std::string& detail = "") {
        std::cout << (ok ? "[PASS] " : "[FAIL] ") << name;
        if (!detail.empty()) std::cout << " (" << detail << ")";
        std::cout << "\n";
        if (!ok) ++failures;
    };

    {
        const TokenizerScheme tok = TokenizerScheme::distribution();
        WordDistribution a = WordDistribution::from_text("alpha beta beta gamma", tok);
        WordDistribution b = WordDistribution::from_text("beta gamma gamma delta", tok);
        bool ok = jsd(a, a) == 0.0 && jsd(a, b) == jsd(b, a) && jsd(a, b) > 0.0 && jsd(a, b) <= 1.0;
        WordDistribution p = WordDistribution::from_text("tree", tok);
        WordDistribution q = WordDistribution::from_text("tree rock", tok);
        const double expected = 1.5 - 0.75 * std::log2(3.0);  // closed form for {x} vs {x, y}
        ok = ok && std::abs(jsd(p, q) - expected) < 1e-12;
        check(ok, "divergence identities");
    }

    auto [corpus, users] = demo_corpus();
    const MetricConfig mc;
    {
        auto units = pipeline_units(corpus, users, {PromptStyle::zero_shot, PromptStyle::c_zero_shot},
                                    OracleModel::parse("parrot", cfg.seed), cfg.seed);
        bool ok = true;
        std::string detail;
        for (auto& [style, built] : units) {
            if (built.units.empty() || built.skipped) {
                ok = false;
                detail = style_name(style) + ": units missing";
                break;
            }
            SystemScore sys = degress_system_units(built.units, "parrot", style_name(style), mc,
                                                   detail::distribution_pair_sigma(mc.divergence));
            if (!(std::abs(sys.egises) <= 1e-9)) {
                ok = false;
                detail = style_name(style) + ": EGISES " + std::to_string(sys.egises);
                break;
            }
        }
        check(ok, "parrot oracle scores EGISES 0 through the full pipeline", detail);
    }
    {
        auto units = pipeline_units(corpus, users, {PromptStyle::zero_shot},
                                    OracleModel::parse("constant", cfg.seed), cfg.seed);
        BuiltUnits& built = units[PromptStyle::zero_shot];
        bool ok = !built.units.empty();
        for (const ScoringUnit& u : built.units)
            for (size_t j = 0; ok && j < u.users.size(); ++j) {
                double d = degress_for_user(u, j, mc, detail::distribution_pair_sigma(mc.divergence));
                ok = d >= 0.25 && d <= 0.25 + 1e-6;  // identical outputs leave only the self term
            }
        check(ok, "constant oracle scores per-user DEGRESS 1/n");
    }
    {
        double max_delta = 0.0;
        for (uint64_t seed = 1; seed <= fixtures; ++seed) {
            std::vector<BfInstance> fixture = random_bf_fixture(seed);
            BfScores bs = brute_force_degress(fixture);
            std::vector<SummaryScore> details;
            SystemScore sys = degress_system(instances_from_bf(fixture, "m", "zero_shot"), "m",
                                             "zero_shot", MetricConfig{}, &details);
            max_delta = std::max(max_delta, std::abs(sys.degress - bs.system_degress));
            for (const SummaryScore& d : details)
                max_delta =
                    std::max(max_delta, std::abs(d.degress - bs.per_user.at(d.doc_id + "/" + d.user_id)));
        }
        char buf[64];
        std::snprintf(buf, sizeof(buf), "max |delta| = %.3g", max_delta);
        check(max_delta <= 1e-12,
              "engine matches the brute-force evaluator on " + std::to_string(fixtures) + " fixtures", buf);
    }

    if (failures) std::cout << failures << " selftest failure(s)\n";
    return failures ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"in-context personalization evaluation for summarization models"};
    app.require_subcommand(1);
    app.set_version_flag("--version", toolkit_version);

    std::string config_path;
    std::vector<std::pair<std::string, std::string>> overrides;
    std::string table_flag, base_map_path, ratings_path, export_pairs_path;
    size_t fixtures = 100;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key=value config file");
        auto bind = [&overrides, cmd](const std::string& flag, const std::string& key,
                                      const std::string& help) {
            cmd->add_option_function<std::string>(
                flag, [&overrides, key](const std::string& v) { overrides.emplace_back(key, v); }, help);
        };
        bind("--corpus", "corpus", "news corpus file (.tsv or .jsonl)");
        bind("--users", "users", "user table file (.tsv or .jsonl)");
        bind("--out-dir", "out_dir", "artifact directory (default: out)");
        bind("--seed", "seed", "seed for all sampling");
        bind("--workers", "workers", "parallel workers for collection and scoring");
        bind("--pairs-per-doc", "pairs_per_doc", "contrastive pairs sampled per document (default 3)");
        bind("--max-docs", "max_docs", "cap instances to a deterministic sample (0 = all)");
        bind("--styles", "styles", "comma-separated prompt styles (default: all six)");
        bind("--rules", "rules", "paradox rule set: empirical | definitional");
        bind("--epsilon", "epsilon", "ratio smoothing epsilon (default 1e-8)");
        bind("--doc-distance-floor", "doc_distance_floor", "deviation-weight denominator floor");
        bind("--include-self-term", "include_self_term", "include the k = j ratio term (true|false)");
        bind("--divergence", "divergence", "summary distance: jsd | sqrt_jsd");
        bind("--tau-u", "tau_u", "reference divergence threshold (< 0: median)");
        bind("--tau-s", "tau_s", "generated divergence threshold (< 0: same as tau-u)");
        bind("--adapter", "adapter", "completion adapter: oracle | playback | http");
        bind("--oracle", "oracle", "oracle: parrot | constant | interpolate:<lambda> | profile-sensitive");
        bind("--playback", "playback", "recorded completions JSONL for the playback adapter");
        bind("--http-host", "http_host", "completion endpoint host");
        bind("--http-port", "http_port", "completion endpoint port");
        bind("--http-path", "http_path", "completion endpoint path");
        bind("--model-id", "model_id", "model identifier used in records and artifact names");
        bind("--temperature", "temperature", "decoding temperature, forwarded to the adapter");
        bind("--top-k", "top_k", "decoding top-k, forwarded to the adapter");
        bind("--max-tokens", "max_tokens", "decoding token cap, forwarded to the adapter");
    };

    CLI::App* ingest = app.add_subcommand("ingest", "parse inputs, build instances and contrastive pairs");
    CLI::App* build = app.add_subcommand("build-prompts", "render budgeted prompts for the chosen styles");
    CLI::App* collect_cmd = app.add_subcommand("collect", "gather completions for rendered prompts");
    CLI::App* score = app.add_subcommand("score", "score completions and update the score table");
    CLI::App* probe = app.add_subcommand("probe", "detect less-is-more paradoxes in a score table");
    CLI::App* adversarial = app.add_subcommand("adversarial", "profile-swap validation of pair scoring");
    CLI::App* hj = app.add_subcommand("hj-score", "score one style with human pairwise ratings");
    CLI::App* report = app.add_subcommand("report", "emit leaderboard, paradox matrix, and aggregates");
    CLI::App* selftest = app.add_subcommand("selftest", "internal consistency checks");
    for (CLI::App* cmd : {ingest, build, collect_cmd, score, probe, adversarial, hj, report, selftest})
        add_common(cmd);
    probe->add_option("--table", table_flag, "score table CSV (default <out-dir>/score_table.csv)");
    report->add_option("--table", table_flag, "score table CSV (default <out-dir>/score_table.csv)");
    report->add_option("--base-map", base_map_path, "tuned=base model pairs, one per line");
    hj->add_option("--ratings", ratings_path, "ratings JSONL: {doc_id, side, a_id, b_id, rating}");
    hj->add_option("--export-pairs", export_pairs_path, "write the rating slots this scoring needs, then exit");
    selftest->add_option("--fixtures", fixtures, "random fixtures for the evaluator cross-check");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg.load_file(config_path);
        cfg.apply_env();
        for (const auto& [k, v] : overrides) cfg.set(k, v);

        if (ingest->parsed()) cmd_ingest(cfg);
        else if (build->parsed()) cmd_build_prompts(cfg);
        else if (collect_cmd->parsed()) cmd_collect(cfg);
        else if (score->parsed()) cmd_score(cfg);
        else if (probe->parsed()) cmd_probe(cfg, table_flag);
        else if (adversarial->parsed()) cmd_adversarial(cfg);
        else if (hj->parsed()) cmd_hj_score(cfg, ratings_path, export_pairs_path);
        else if (report->parsed()) cmd_report(cfg, table_flag, base_map_path);
        else if (selftest->parsed()) return cmd_selftest(cfg, fixtures);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
