#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "icpl/oracles.hpp"

using namespace icpl;

namespace {

std::string words(const std::string& stem, size_t n) {
    std::string out;
    for (size_t i = 0; i < n; ++i) out += (i ? " " : "") + stem + std::to_string(i);
    return out;
}

struct MiniWorld {
    CorpusStore corpus;
    std::map<std::string, UserProfile> users;
    EvalInstance inst;
    ContrastiveSample sample;

    MiniWorld() {
        corpus["D1"] = {"D1", "breaking title", words("body", 40), ""};
        corpus["D2"] = {"D2", "ex two", words("evidence", 8), ""};
        corpus["D3"] = {"D3", "ex three", words("ruling", 8), ""};
        corpus["H1"] = {"H1", "parliament vote recap", "h", ""};
        corpus["H2"] = {"H2", "transfer window gossip", "h", ""};
        users["U1"] = {"U1", {"H1"}, {{"D1", "u1 ref d1"}, {"D2", "u1 ref d2"}, {"D3", "u1 ref d3"}}};
        users["U2"] = {"U2", {"H2"}, {{"D1", "u2 ref d1"}, {"D2", "u2 ref d2"}, {"D3", "u2 ref d3"}}};
        users["U3"] = {"U3", {"H1"}, {{"D4", "donor noise headline"}}};
        inst.query_doc = corpus["D1"];
        inst.users = {{users["U1"], "u1 ref d1"}, {users["U2"], "u2 ref d1"}};
        sample.query_doc = corpus["D1"];
        sample.user_pair = {users["U1"], users["U2"]};
        sample.shared_example_docs = {{corpus["D2"], "u1 ref d2", "u2 ref d2"},
                                      {corpus["D3"], "u1 ref d3", "u2 ref d3"}};
    }

    OracleContext ctx() const { return {&corpus, &users}; }
};

std::set<std::string> token_set(const std::string& text) {
    auto toks = tokenize(text, TokenizerScheme::distribution());
    return {toks.begin(), toks.end()};
}

std::multiset<std::string> token_bag(const std::string& text) {
    auto toks = tokenize(text, TokenizerScheme::budget());
    return {toks.begin(), toks.end()};
}

}  // namespace

TEST_CASE("oracle spec parsing") {
    CHECK(OracleModel::parse("parrot").kind == OracleKind::parrot);
    CHECK(OracleModel::parse("constant").name() == "oracle:constant");
    OracleModel interp = OracleModel::parse("interpolate:0.5", 7);
    CHECK(interp.kind == OracleKind::interpolate);
    CHECK(interp.lambda == 0.5);
    CHECK(interp.seed == 7);
    CHECK(interp.name() == "oracle:interpolate:0.5");
    CHECK(OracleModel::parse("profile-sensitive").kind == OracleKind::profile_sensitive);
    CHECK(OracleModel::parse("profile_sensitive").name() == "oracle:profile-sensitive");
    CHECK_THROWS_AS(OracleModel::parse("interpolate:1.5"), std::invalid_argument);
    CHECK_THROWS_AS(OracleModel::parse("gpt4"), std::invalid_argument);
}

TEST_CASE("prompt section carving") {
    const std::string text =
        "[TASK]\npreamble words\n\n[HISTORY User1: U1]\n- clicked one\n- clicked two\n\n"
        "[EXAMPLE 1]\nTitle: ex\nbody line\nHEADLINE: my old headline\n\n"
        "[ARTICLE]\nTitle: t\narticle body here\n\n[OUTPUT]\nAnswer exactly as: HEADLINE: <headline>";

    auto sections = detail::prompt_sections(text);
    REQUIRE(sections.size() == 5);
    CHECK(sections[0].first == "[TASK]");
    CHECK(sections[3].first == "[ARTICLE]");

    SECTION("plain profile text = history body plus example headline payloads") {
        std::string prof = detail::profile_section_text(text, 1, false);
        CHECK_THAT(prof, Catch::Matchers::ContainsSubstring("- clicked one"));
        CHECK_THAT(prof, Catch::Matchers::ContainsSubstring("my old headline"));
        CHECK(prof.find("article body") == std::string::npos);
        // the [OUTPUT] format demo also contains a marker-shaped line; it
        // must never leak into the profile bag
        CHECK(prof.find("<headline>") == std::string::npos);
    }
    SECTION("article text") {
        CHECK(trim(detail::article_section_text(text)) == "Title: t\narticle body here");
    }
    SECTION("contrastive markers select the requested ordinal") {
        const std::string ctext =
            "[HISTORY User1: U1]\n- one\n\n[HISTORY User2: U2]\n- two\n\n"
            "[EXAMPLE 1]\nTitle: e\nHEADLINE User1: first ref\nHEADLINE User2: second ref\n";
        std::string p1 = detail::profile_section_text(ctext, 1, true);
        std::string p2 = detail::profile_section_text(ctext, 2, true);
        CHECK_THAT(p1, Catch::Matchers::ContainsSubstring("- one"));
        CHECK_THAT(p1, Catch::Matchers::ContainsSubstring("first ref"));
        CHECK(p1.find("second ref") == std::string::npos);
        CHECK_THAT(p2, Catch::Matchers::ContainsSubstring("- two"));
        CHECK_THAT(p2, Catch::Matchers::ContainsSubstring("second ref"));
        CHECK(p2.find("first ref") == std::string::npos);
    }
}

TEST_CASE("parrot oracle returns the gold reference verbatim") {
    MiniWorld w;
    PromptForge forge(w.corpus);
    RenderedPrompt p = forge.render_plain(PromptStyle::zero_shot, w.users["U1"], w.inst);
    OracleModel parrot = OracleModel::parse("parrot");
    CHECK(oracle_summarize(parrot, p, w.ctx(), "U1") == "u1 ref d1");
    CHECK(oracle_summarize(parrot, p, w.ctx(), "U2") == "u2 ref d1");

    CHECK_THROWS_WITH(oracle_summarize(parrot, p, w.ctx(), "U9"),
                      Catch::Matchers::ContainsSubstring("unknown user"));
    RenderedPrompt foreign = p;
    foreign.doc_id = "D4";
    CHECK_THROWS_WITH(oracle_summarize(parrot, foreign, w.ctx(), "U1"),
                      Catch::Matchers::ContainsSubstring("no gold reference"));
    OracleContext no_users{&w.corpus, nullptr};
    CHECK_THROWS_WITH(oracle_summarize(parrot, p, no_users, "U1"),
                      Catch::Matchers::ContainsSubstring("user context missing"));
}

TEST_CASE("constant oracle ignores the user") {
    MiniWorld w;
    PromptForge forge(w.corpus);
    RenderedPrompt p = forge.render_plain(PromptStyle::zero_shot, w.users["U1"], w.inst);
    OracleModel c = OracleModel::parse("constant");
    c.summary_tokens = 10;
    std::string s1 = oracle_summarize(c, p, w.ctx(), "U1");
    std::string s2 = oracle_summarize(c, p, w.ctx(), "U2");
    CHECK(s1 == s2);
    CHECK(s1 == "breaking title " + words("body", 8));  // first 10 of title+body
    OracleContext no_corpus{nullptr, &w.users};
    CHECK_THROWS_WITH(oracle_summarize(c, p, no_corpus, "U1"),
                      Catch::Matchers::ContainsSubstring("corpus context missing"));
}

TEST_CASE("interpolation mixes reference and document tokens") {
    MiniWorld w;
    PromptForge forge(w.corpus);
    RenderedPrompt p = forge.render_plain(PromptStyle::zero_shot, w.users["U1"], w.inst);

    SECTION("lambda 1 is a shuffle of the reference tokens") {
        OracleModel m = OracleModel::parse("interpolate:1", 3);
        std::string out = oracle_summarize(m, p, w.ctx(), "U1");
        CHECK(token_bag(out) == token_bag("u1 ref d1"));
    }
    SECTION("lambda 0 is a shuffle of the leading document tokens") {
        OracleModel m = OracleModel::parse("interpolate:0", 3);
        m.summary_tokens = 6;
        std::string out = oracle_summarize(m, p, w.ctx(), "U1");
        CHECK(token_bag(out) == token_bag(words("body", 6)));
    }
    SECTION("intermediate lambda splits the slots between the two sources") {
        OracleModel m = OracleModel::parse("interpolate:0.5", 3);
        m.summary_tokens = 10;  // 5 ref slots (ref has only 3) + 5 doc tokens
        std::string out = oracle_summarize(m, p, w.ctx(), "U1");
        CHECK(token_bag(out) == token_bag("u1 ref d1 " + words("body", 5)));
    }
    SECTION("deterministic per (seed, prompt, user)") {
        OracleModel m = OracleModel::parse("interpolate:0.4", 11);
        CHECK(oracle_summarize(m, p, w.ctx(), "U1") == oracle_summarize(m, p, w.ctx(), "U1"));
        OracleModel other = m;
        other.seed = 12;
        CHECK(oracle_summarize(m, p, w.ctx(), "U1") != oracle_summarize(other, p, w.ctx(), "U1"));
    }
}

TEST_CASE("profile-sensitive oracle samples from the user's own prompt sections") {
    MiniWorld w;
    PromptForge forge(w.corpus);
    OracleModel m = OracleModel::parse("profile-sensitive", 5);

    SECTION("plain prompt: history titles feed the bag") {
        RenderedPrompt p = forge.render_plain(PromptStyle::zero_shot, w.users["U1"], w.inst);
        std::string out = oracle_summarize(m, p, w.ctx(), "U1");
        std::set<std::string> bag = token_set(detail::profile_section_text(p.text, 1, false));
        for (const std::string& t : tokenize(out, TokenizerScheme::distribution()))
            CHECK(bag.count(t) == 1);
        CHECK(count_tokens(out, TokenizerScheme::budget()) == m.summary_tokens);
    }
    SECTION("no profile sections: falls back to the article") {
        RenderedPrompt p;
        p.prompt_id = "zero_shot|D1|U1";
        p.style = PromptStyle::zero_shot;
        p.doc_id = "D1";
        p.user_ids = {"U1"};
        p.text = "[ARTICLE]\nTitle: breaking title\n" + words("body", 40);
        std::string out = oracle_summarize(m, p, w.ctx(), "U1");
        std::set<std::string> art = token_set(detail::article_section_text(p.text));
        for (const std::string& t : tokenize(out, TokenizerScheme::distribution()))
            CHECK(art.count(t) == 1);

        p.text = "[OUTPUT]\n";
        CHECK_THROWS_WITH(oracle_summarize(m, p, w.ctx(), "U1"),
                          Catch::Matchers::ContainsSubstring("no profile or article tokens"));
    }
    SECTION("perturbing user 2 changes only user 2's summary") {
        RenderedPrompt genuine = forge.render_contrastive(PromptStyle::c_two_shot_hist, w.sample);
        ContrastiveSample adv = adversarial_perturb(w.sample, {w.users["U1"], w.users["U2"], w.users["U3"]}, 17);
        RenderedPrompt perturbed = forge.render_contrastive(PromptStyle::c_two_shot_hist, adv);
        REQUIRE(genuine.prompt_id == perturbed.prompt_id);  // same pair, same id
        CHECK(oracle_summarize(m, genuine, w.ctx(), "U1") == oracle_summarize(m, perturbed, w.ctx(), "U1"));
        CHECK(oracle_summarize(m, genuine, w.ctx(), "U2") != oracle_summarize(m, perturbed, w.ctx(), "U2"));
    }
}

TEST_CASE("oracle client answers in the marker protocol") {
    MiniWorld w;
    PromptForge forge(w.corpus);
    std::vector<RenderedPrompt> prompts = {
        forge.render_plain(PromptStyle::zero_shot, w.users["U1"], w.inst),
        forge.render_contrastive(PromptStyle::c_zero_shot, w.sample)};
    OracleClient client(OracleModel::parse("parrot"), w.ctx(), prompts);

    CompletionResult plain = client.complete({prompts[0].prompt_id, "m", "", {}});
    REQUIRE(plain.ok);
    CHECK(plain.text == "HEADLINE: u1 ref d1");

    CompletionResult both = client.complete({prompts[1].prompt_id, "m", "", {}});
    REQUIRE(both.ok);
    CHECK(both.text == "HEADLINE User1: u1 ref d1\nHEADLINE User2: u2 ref d1");

    CompletionResult missing = client.complete({"zero_shot|DX|U1", "m", "", {}});
    CHECK_FALSE(missing.ok);
    CHECK_THAT(missing.error, Catch::Matchers::ContainsSubstring("unknown prompt_id"));

    SECTION("context errors surface as failed completions, not throws") {
        OracleClient broken(OracleModel::parse("parrot"), OracleContext{}, prompts);
        CompletionResult res = broken.complete({prompts[0].prompt_id, "m", "", {}});
        CHECK_FALSE(res.ok);
        CHECK_THAT(res.error, Catch::Matchers::ContainsSubstring("context missing"));
    }
    SECTION("collect over an oracle client produces matched records") {
        CollectConfig cfg;
        cfg.model_id = "oracle:parrot";
        CollectStats stats;
        auto records = collect(prompts, client, cfg, &stats);
        // the plain prompt matches; the contrastive raw text has no bare
        // marker line, so collect-level extraction is a fallback (scoring
        // re-extracts it per user)
        CHECK(stats.matched == 1);
        CHECK(stats.fallback == 1);
        CHECK(stats.failed == 0);
        CHECK(records[1].extracted_summary == "u1 ref d1");  // zero_shot sorts second
    }
}

TEST_CASE("random fixtures are deterministic in the seed") {
    auto a = random_bf_fixture(31);
    auto b = random_bf_fixture(31);
    auto c = random_bf_fixture(32);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].doc_text == b[i].doc_text);
        REQUIRE(a[i].users.size() == b[i].users.size());
        for (size_t j = 0; j < a[i].users.size(); ++j) {
            CHECK(a[i].users[j].ref_text == b[i].users[j].ref_text);
            CHECK(a[i].users[j].gen_text == b[i].users[j].gen_text);
        }
    }
    bool differs = c.size() != a.size();
    if (!differs) differs = a[0].doc_text != c[0].doc_text;
    CHECK(differs);
}

TEST_CASE("engine and brute force agree to 1e-12 on random fixtures") {
    for (uint64_t seed = 100; seed < 110; ++seed) {
        for (bool self_term : {true, false}) {
            auto bf_fixture = random_bf_fixture(seed);
            BfScores expected = brute_force_degress(bf_fixture, 1e-8, 1e-9, self_term);

            auto instances = instances_from_bf(bf_fixture, "m", "zero_shot");
            MetricConfig cfg;
            cfg.include_self_term = self_term;
            std::vector<SummaryScore> details;
            SystemScore got = degress_system(instances, "m", "zero_shot", cfg, &details);

            INFO("seed " << seed << " self_term " << self_term);
            CHECK(std::abs(got.degress - expected.system_degress) <= 1e-12);
            CHECK(std::abs(got.egises - expected.system_egises) <= 1e-12);
            REQUIRE(details.size() == expected.per_user.size());
            for (const SummaryScore& d : details) {
                auto it = expected.per_user.find(d.doc_id + "/" + d.user_id);
                REQUIRE(it != expected.per_user.end());
                CHECK(std::abs(d.degress - it->second) <= 1e-12);
            }
        }
    }
}
