#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "icpl/promptforge.hpp"

using namespace icpl;

namespace {

Document doc(std::string id, std::string title, std::string body) {
    return {std::move(id), std::move(title), std::move(body), ""};
}

std::string words(const std::string& stem, size_t n) {
    std::ostringstream os;
    for (size_t i = 0; i < n; ++i) os << (i ? " " : "") << stem << i;
    return os.str();
}

// Small world: query D1, example docs D2/D3, donor docs D4..D6, history H*.
struct World {
    CorpusStore corpus;
    UserProfile u1, u2, u3, u4;
    EvalInstance inst;
    ContrastiveSample sample;

    World() {
        corpus["D1"] = doc("D1", "query title", "d1 body " + words("q", 20));
        corpus["D2"] = doc("D2", "ex two title", "d2 body " + words("e", 20));
        corpus["D3"] = doc("D3", "ex three title", "d3 body " + words("f", 20));
        corpus["D4"] = doc("D4", "donor four", "d4 body");
        corpus["D5"] = doc("D5", "donor five", "d5 body");
        corpus["D6"] = doc("D6", "donor six", "d6 body");
        for (int i = 0; i < 3; ++i) {
            std::string id = "H" + std::to_string(i);
            corpus[id] = doc(id, "hist title " + std::to_string(i), "hist body");
        }
        u1 = {"U1", {"H0", "H1"}, {{"D1", "u1 ref d1"}, {"D2", "u1 ref d2"}, {"D3", "u1 ref d3"}}};
        u2 = {"U2", {"H1", "H2"}, {{"D1", "u2 ref d1"}, {"D2", "u2 ref d2"}, {"D3", "u2 ref d3"}}};
        u3 = {"U3", {"H2"}, {{"D4", "donor3 d4"}, {"D5", "donor3 d5"}}};
        u4 = {"U4", {"H0"}, {{"D6", "donor4 d6"}}};
        inst.query_doc = corpus["D1"];
        inst.users = {{u1, "u1 ref d1"}, {u2, "u2 ref d1"}};
        sample.query_doc = corpus["D1"];
        sample.user_pair = {u1, u2};
        sample.shared_example_docs = {{corpus["D2"], "u1 ref d2", "u2 ref d2"},
                                      {corpus["D3"], "u1 ref d3", "u2 ref d3"}};
    }
};

}  // namespace

TEST_CASE("per-style budgets") {
    auto check = [](PromptStyle s, size_t hist, size_t ex, size_t art, size_t hs, size_t es) {
        PromptBudget b = budget_for(s);
        CHECK(b.history_tokens == hist);
        CHECK(b.example_tokens == ex);
        CHECK(b.article_tokens == art);
        CHECK(b.total_tokens == 3700);
        CHECK(b.history_slots == hs);
        CHECK(b.example_slots == es);
    };
    check(PromptStyle::zero_shot, 1200, 0, 2500, 1, 0);
    check(PromptStyle::c_zero_shot, 1000, 0, 1700, 2, 0);
    check(PromptStyle::two_shot_no_hist, 0, 950, 1800, 0, 2);
    check(PromptStyle::c_two_shot_no_hist, 0, 950, 1800, 0, 2);
    check(PromptStyle::two_shot_hist, 1200, 600, 1300, 1, 2);
    check(PromptStyle::c_two_shot_hist, 850, 450, 1100, 2, 2);
}

TEST_CASE("template parsing") {
    TemplateSet t = TemplateSet::parse(default_template_text);
    CHECK(t.blocks.size() == 10);
    CHECK(t.block("history_item") == "- {{title}}");
    CHECK_THROWS_WITH(TemplateSet::parse("@preamble_plain\nhello\n"),
                      Catch::Matchers::ContainsSubstring("missing block"));
    CHECK(&TemplateSet::default_set() == &TemplateSet::default_set());

    SECTION("fill replaces every occurrence and ignores unknown slots") {
        std::string s = fill("{{a}} and {{a}} but {{b}}", {{"a", "x"}});
        CHECK(s == "x and x but {{b}}");
    }
}

TEST_CASE("plain zero-shot prompt layout") {
    World w;
    PromptForge forge(w.corpus);
    RenderedPrompt p = forge.render_plain(PromptStyle::zero_shot, w.u1, w.inst);

    CHECK(p.prompt_id == "zero_shot|D1|U1");
    CHECK(p.doc_id == "D1");
    CHECK(p.user_ids == std::vector<std::string>{"U1"});
    CHECK(p.perturbation_tag == PerturbationTag::genuine);

    const size_t task = p.text.find("[TASK]");
    const size_t hist = p.text.find("[HISTORY User1: U1]");
    const size_t art = p.text.find("[ARTICLE]");
    const size_t out = p.text.find("[OUTPUT]");
    REQUIRE(task != std::string::npos);
    REQUIRE(hist != std::string::npos);
    REQUIRE(art != std::string::npos);
    REQUIRE(out != std::string::npos);
    CHECK((task < hist && hist < art && art < out));
    CHECK(p.text.find("[EXAMPLE") == std::string::npos);
    CHECK_THAT(p.text, Catch::Matchers::ContainsSubstring("- hist title 0"));
    CHECK_THAT(p.text, Catch::Matchers::ContainsSubstring("- hist title 1"));
    CHECK_THAT(p.text, Catch::Matchers::ContainsSubstring("Title: query title"));
    CHECK_THAT(p.text, Catch::Matchers::ContainsSubstring("HEADLINE: <headline>"));

    std::vector<std::string> keys;
    for (const auto& [k, v] : p.section_token_counts) keys.push_back(k);
    CHECK(keys == std::vector<std::string>{"article", "history_user1", "instruction", "preamble"});
    CHECK(p.truncation_report.empty());
}

TEST_CASE("plain two-shot examples come from the user's other annotated docs") {
    World w;
    w.u1.gold_refs["D5"] = "u1 ref d5";  // third candidate, must not be used
    PromptForge forge(w.corpus);
    RenderedPrompt p = forge.render_plain(PromptStyle::two_shot_no_hist, w.u1, w.inst);
    CHECK_THAT(p.text, Catch::Matchers::ContainsSubstring("[EXAMPLE 1]\nTitle: ex two title"));
    CHECK_THAT(p.text, Catch::Matchers::ContainsSubstring("[EXAMPLE 2]\nTitle: ex three title"));
    CHECK_THAT(p.text, Catch::Matchers::ContainsSubstring("HEADLINE: u1 ref d2"));
    CHECK_THAT(p.text, Catch::Matchers::ContainsSubstring("HEADLINE: u1 ref d3"));
    CHECK(p.text.find("donor five") == std::string::npos);
    CHECK(p.text.find("[HISTORY") == std::string::npos);

    SECTION("fewer than two candidates is an error") {
        UserProfile thin{"U9", {}, {{"D1", "r1"}, {"D2", "r2"}}};  // only D2 besides the query
        CHECK_THROWS_WITH(forge.render_plain(PromptStyle::two_shot_hist, thin, w.inst),
                          Catch::Matchers::ContainsSubstring("U9"));
    }
    SECTION("contrastive style is rejected") {
        CHECK_THROWS_AS(forge.render_plain(PromptStyle::c_zero_shot, w.u1, w.inst),
                        std::invalid_argument);
    }
}

TEST_CASE("contrastive prompt layout") {
    World w;
    PromptForge forge(w.corpus);
    RenderedPrompt p = forge.render_contrastive(PromptStyle::c_two_shot_hist, w.sample);
    CHECK(p.prompt_id == "c_two_shot_hist|D1|U1+U2");
    CHECK(p.user_ids == std::vector<std::string>{"U1", "U2"});
    CHECK_THAT(p.text, Catch::Matchers::ContainsSubstring("[HISTORY User1: U1]"));
    CHECK_THAT(p.text, Catch::Matchers::ContainsSubstring("[HISTORY User2: U2]"));
    CHECK_THAT(p.text, Catch::Matchers::ContainsSubstring("HEADLINE User1: u1 ref d2"));
    CHECK_THAT(p.text, Catch::Matchers::ContainsSubstring("HEADLINE User2: u2 ref d2"));
    CHECK(p.section_token_counts.count("history_user2") == 1);
    CHECK(p.section_token_counts.count("example_2") == 1);

    SECTION("c_zero_shot works without shared examples") {
        ContrastiveSample s = w.sample;
        s.shared_example_docs.clear();
        s.no_shared_examples = true;
        RenderedPrompt q = forge.render_contrastive(PromptStyle::c_zero_shot, s);
        CHECK(q.text.find("[EXAMPLE") == std::string::npos);
        CHECK(q.section_token_counts.count("history_user1") == 1);
    }
    SECTION("two-shot contrastive without enough shared examples throws") {
        ContrastiveSample s = w.sample;
        s.shared_example_docs.resize(1);
        CHECK_THROWS_WITH(forge.render_contrastive(PromptStyle::c_two_shot_no_hist, s),
                          Catch::Matchers::ContainsSubstring("shared example"));
    }
    SECTION("example doc equal to the query doc is a logic error") {
        ContrastiveSample s = w.sample;
        s.shared_example_docs[0].doc = s.query_doc;
        CHECK_THROWS_AS(forge.render_contrastive(PromptStyle::c_two_shot_hist, s), std::logic_error);
    }
    SECTION("plain style is rejected") {
        CHECK_THROWS_AS(forge.render_contrastive(PromptStyle::zero_shot, w.sample),
                        std::invalid_argument);
    }
}

TEST_CASE("oversized inputs are truncated to the style budget") {
    World w;
    w.corpus["D1"].body = words("art", 3000);
    // 40 history docs of 50-token titles: far past the 1200-token history cap
    for (int i = 0; i < 40; ++i) {
        std::string id = "HL" + std::to_string(i);
        w.corpus[id] = doc(id, words("h" + std::to_string(i) + "x", 50), "b");
        w.u1.click_history.push_back(id);
    }
    w.inst.query_doc = w.corpus["D1"];
    PromptForge forge(w.corpus);
    RenderedPrompt p = forge.render_plain(PromptStyle::zero_shot, w.u1, w.inst);

    const PromptBudget bud = budget_for(PromptStyle::zero_shot);
    CHECK(p.section_token_counts.at("history_user1") <= bud.history_tokens);
    CHECK(p.section_token_counts.at("article") <= bud.article_tokens);
    CHECK(count_tokens(p.text, TokenizerScheme::budget()) <= bud.total_tokens);
    CHECK(p.truncation_report.count("history_user1") == 1);
    CHECK(p.truncation_report.count("article") == 1);
    // preamble + instruction are unbudgeted, so they squeeze the article
    CHECK(p.truncation_report.count("article_budget_shrink") == 1);
    // head of the body survives, tail is what got dropped
    CHECK_THAT(p.text, Catch::Matchers::ContainsSubstring("Title: query title\nart0 art1"));
    CHECK(p.text.find("art2999") == std::string::npos);

    SECTION("drop_tail=false keeps the tail instead") {
        ForgeOptions opt;
        opt.drop_tail = false;
        PromptForge keep_tail(w.corpus, TemplateSet::default_set(), opt);
        RenderedPrompt q = keep_tail.render_plain(PromptStyle::zero_shot, w.u1, w.inst);
        CHECK_THAT(q.text, Catch::Matchers::ContainsSubstring("art2999"));
        CHECK(q.text.find("art0 ") == std::string::npos);
        CHECK(count_tokens(q.text, TokenizerScheme::budget()) <= bud.total_tokens);
    }
}

TEST_CASE("example reference lines survive body truncation") {
    World w;
    w.corpus["D2"].body = words("long", 800);
    PromptBudget tight = budget_for(PromptStyle::two_shot_no_hist);
    tight.example_tokens = 40;
    ForgeOptions opt;
    opt.budget_overrides[PromptStyle::two_shot_no_hist] = tight;
    PromptForge forge(w.corpus, TemplateSet::default_set(), opt);
    CHECK(forge.budget(PromptStyle::two_shot_no_hist).example_tokens == 40);
    CHECK(forge.budget(PromptStyle::zero_shot).example_tokens == 0);

    RenderedPrompt p = forge.render_plain(PromptStyle::two_shot_no_hist, w.u1, w.inst);
    CHECK(p.section_token_counts.at("example_1") <= 40);
    CHECK(p.truncation_report.at("example_1") > 0);
    CHECK_THAT(p.text, Catch::Matchers::ContainsSubstring("HEADLINE: u1 ref d2"));
}

TEST_CASE("prompt json round trip") {
    World w;
    PromptForge forge(w.corpus);
    RenderedPrompt p = forge.render_contrastive(PromptStyle::c_two_shot_no_hist, w.sample);
    p.perturbation_tag = PerturbationTag::adversarial;
    RenderedPrompt q = prompt_from_json(prompt_to_json(p));
    CHECK(q.prompt_id == p.prompt_id);
    CHECK(q.style == p.style);
    CHECK(q.doc_id == p.doc_id);
    CHECK(q.user_ids == p.user_ids);
    CHECK(q.text == p.text);
    CHECK(q.section_token_counts == p.section_token_counts);
    CHECK(q.truncation_report == p.truncation_report);
    CHECK(q.perturbation_tag == PerturbationTag::adversarial);
}

TEST_CASE("dataset construction counts renders and failures per style") {
    World w;
    UserProfile thin{"U9", {"H0"}, {{"D1", "u9 ref d1"}}};
    w.inst.users.push_back({thin, "u9 ref d1"});
    PromptForge forge(w.corpus);
    std::vector<PromptStyle> styles = {PromptStyle::zero_shot, PromptStyle::two_shot_no_hist,
                                       PromptStyle::c_zero_shot};
    PromptDataset ds = build_prompt_dataset({w.inst}, {w.sample}, styles, forge);

    const json& st = ds.manifest.at("styles");
    CHECK(st.at("zero_shot").at("rendered") == 3);
    CHECK(st.at("zero_shot").at("failed") == 0);
    CHECK(st.at("two_shot_no_hist").at("rendered") == 2);
    CHECK(st.at("two_shot_no_hist").at("failed") == 1);
    CHECK(st.at("c_zero_shot").at("rendered") == 1);
    REQUIRE(ds.manifest.at("render_errors").size() == 1);
    CHECK(ds.manifest.at("render_errors")[0].at("user_id") == "U9");
    CHECK(ds.manifest.at("records") == ds.records.size());
    CHECK(ds.records.size() == 6);
    CHECK(std::is_sorted(ds.records.begin(), ds.records.end(),
                         [](const RenderedPrompt& a, const RenderedPrompt& b) {
                             return a.prompt_id < b.prompt_id;
                         }));
}

TEST_CASE("adversarial perturbation swaps user 2's profile for donor noise") {
    World w;
    std::vector<UserProfile> pool = {w.u1, w.u2, w.u3, w.u4};
    ContrastiveSample out = adversarial_perturb(w.sample, pool, 99);

    CHECK(out.perturbation_tag == PerturbationTag::adversarial);
    // user 1 fully untouched
    CHECK(out.user_pair.first.click_history == w.u1.click_history);
    CHECK(out.user_pair.first.gold_refs == w.u1.gold_refs);
    // user 2 keeps identity and gold refs, loses the genuine click history
    CHECK(out.user_pair.second.user_id == "U2");
    CHECK(out.user_pair.second.gold_refs == w.u2.gold_refs);
    CHECK(out.user_pair.second.click_history != w.u2.click_history);
    const bool from_donor = out.user_pair.second.click_history == w.u3.click_history ||
                            out.user_pair.second.click_history == w.u4.click_history;
    CHECK(from_donor);

    const std::vector<std::string> donor_headlines = {"donor3 d4", "donor3 d5", "donor4 d6"};
    for (size_t i = 0; i < out.shared_example_docs.size(); ++i) {
        const SharedExample& ex = out.shared_example_docs[i];
        CHECK(ex.ref_user1 == w.sample.shared_example_docs[i].ref_user1);
        CHECK(std::count(donor_headlines.begin(), donor_headlines.end(), ex.ref_user2) == 1);
    }

    SECTION("deterministic under a fixed seed") {
        ContrastiveSample again = adversarial_perturb(w.sample, pool, 99);
        CHECK(sample_to_json(again).dump() == sample_to_json(out).dump());
    }
    SECTION("perturbing twice is rejected") {
        CHECK_THROWS_AS(adversarial_perturb(out, pool, 1), std::invalid_argument);
    }
    SECTION("a pool without outside users is rejected") {
        CHECK_THROWS_WITH(adversarial_perturb(w.sample, {w.u1, w.u2}, 1),
                          Catch::Matchers::ContainsSubstring("no user outside the pair"));
    }
    SECTION("donor refs on only the example and query docs cannot be used") {
        UserProfile useless{"U5", {"H0"}, {{"D1", "x"}, {"D2", "y"}}};
        CHECK_THROWS_WITH(adversarial_perturb(w.sample, {w.u1, w.u2, useless}, 1),
                          Catch::Matchers::ContainsSubstring("no donor headline"));
    }
}
