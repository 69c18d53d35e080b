#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <set>

#include "entcell/corpus.h"
#include "entcell/metrics.h"
#include "entcell/rng.h"
#include "entcell/toyworld.h"

using namespace entcell;

namespace {

ToyWorld small_world() {
    WorldParams params;
    params.num_entities = 6;
    params.facts_per_entity = 2;
    params.organism.num_layers = 6;
    params.organism.hidden_dim = 48;
    params.organism.mlp_width = 32;
    params.organism.attention_layers = {3};
    params.seed = 7;
    return make_toy_world(params);
}

} // namespace

TEST_CASE("tokenize round trip on canonical strings") {
    Vocabulary vocab;
    for (const char * w : {"Aldor", "Venn", "spouse"}) vocab.add(w);
    std::string s = "Question: Who is the spouse of Aldor Venn\nAnswer:";
    auto toks = vocab.tokenize(s);
    CHECK(vocab.detokenize(toks) == s);
    CHECK(vocab.tokenize(" Venn") == vocab.tokenize("Venn"));  // leading space is a no-op
    CHECK_THROWS_AS(vocab.tokenize("missingword"), data_error);
}

TEST_CASE("locate_entity_span rules") {
    Vocabulary vocab;
    int a = vocab.add("Aldor"), v = vocab.add("Venn"), o = vocab.id_of("of"), t = vocab.id_of("The");
    int origin = vocab.add("origin");

    std::vector<int> prompt = {t, origin, o, a, v};
    // Longest alias wins at the shared start.
    CHECK(locate_entity_span(prompt, {{a}, {a, v}}) == 4);
    // Alias equals the entire prompt.
    CHECK(locate_entity_span(prompt, {prompt}) == 4);
    // Leftmost occurrence when several aliases appear.
    std::vector<int> doubled = {v, o, a, v};
    CHECK(locate_entity_span(doubled, {{v}, {a, v}}) == 0);
    CHECK_THROWS_AS(locate_entity_span(prompt, {{origin, origin}}), data_error);

    // Brute-force scanner agreement on random placements.
    Rng rng(3);
    std::vector<int> pool = {a, v, o, t, origin};
    for (int iter = 0; iter < 300; ++iter) {
        std::vector<int> p;
        for (int i = 0; i < 6; ++i) p.push_back(pool[rng.below(pool.size())]);
        std::vector<std::vector<int>> aliases = {{a, v}, {v}};
        // oracle: scan all (start, alias) pairs
        int best_start = -1, best_len = 0;
        for (size_t start = 0; start < p.size(); ++start) {
            for (const auto & al : aliases) {
                if (start + al.size() > p.size()) continue;
                if (std::equal(al.begin(), al.end(), p.begin() + static_cast<long>(start))) {
                    if (best_start == -1 || static_cast<int>(start) < best_start ||
                        (static_cast<int>(start) == best_start && static_cast<int>(al.size()) > best_len)) {
                        if (best_start == -1 || static_cast<int>(start) < best_start) {
                            best_start = static_cast<int>(start);
                            best_len = static_cast<int>(al.size());
                        } else {
                            best_len = std::max(best_len, static_cast<int>(al.size()));
                        }
                    }
                }
            }
        }
        if (best_start == -1) {
            CHECK_THROWS_AS(locate_entity_span(p, aliases), data_error);
        } else {
            CHECK(locate_entity_span(p, aliases) == best_start + best_len - 1);
        }
    }
}

TEST_CASE("localization prompt generation") {
    auto world = small_world();
    const auto & entity = world.inventory[0];
    auto bundle = generate_localization_prompts(world.vocab, entity, localization_templates(), 2, 7);
    CHECK(bundle.prompts.size() == 2);
    for (size_t i = 0; i < bundle.prompts.size(); ++i) {
        int pos = bundle.entity_positions[i];
        CHECK(bundle.prompts[i][static_cast<size_t>(pos)] == entity.canonical.back());
        // exactly one canonical occurrence
        int count = 0;
        for (size_t s = 0; s + entity.canonical.size() <= bundle.prompts[i].size(); ++s) {
            if (std::equal(entity.canonical.begin(), entity.canonical.end(),
                           bundle.prompts[i].begin() + static_cast<long>(s))) {
                ++count;
            }
        }
        CHECK(count == 1);
    }
    auto empty = generate_localization_prompts(world.vocab, entity, localization_templates(), 0, 7);
    CHECK(empty.prompts.empty());
    auto again = generate_localization_prompts(world.vocab, entity, localization_templates(), 2, 7);
    CHECK(again.prompts == bundle.prompts);
    CHECK(again.entity_positions == bundle.entity_positions);

    CHECK_THROWS_AS(generate_localization_prompts(world.vocab, entity, {"no slot here"}, 1, 7),
                    config_error);
    CHECK_THROWS_AS(
        generate_localization_prompts(world.vocab, entity, localization_templates(), 101, 7),
        config_error);
    CHECK(localization_templates().size() == 100);
}

TEST_CASE("wrappers and placeholder swap") {
    auto world = small_world();
    const auto & vocab = world.vocab;
    const auto & entity = world.inventory[0];
    const auto & qa = entity.qa[0];

    auto wrapped = qa_wrap(vocab, qa.question);
    CHECK(wrapped.front() == vocab.id_of("Question:"));
    CHECK(wrapped[wrapped.size() - 1] == vocab.id_of("Answer:"));
    CHECK(wrapped[wrapped.size() - 2] == vocab.newline_id());
    CHECK(std::equal(qa.question.begin(), qa.question.end(), wrapped.begin() + 1));

    auto swapped = placeholder_swap(vocab, qa.question, entity.aliases[0]);
    CHECK(swapped.question[static_cast<size_t>(swapped.placeholder_pos)] == vocab.placeholder_id());
    CHECK(swapped.question.size() == qa.question.size() - entity.aliases[0].size() + 1);

    // Only the first of two occurrences is replaced.
    std::vector<int> twice = qa.question;
    twice.insert(twice.end(), entity.aliases[0].begin(), entity.aliases[0].end());
    auto sw2 = placeholder_swap(vocab, twice, entity.aliases[0]);
    int placeholders = 0;
    for (int tok : sw2.question) {
        if (tok == vocab.placeholder_id()) ++placeholders;
    }
    CHECK(placeholders == 1);
    CHECK(sw2.placeholder_pos == locate_alias(qa.question, {entity.aliases[0]}).start);

    CHECK_THROWS_AS(placeholder_swap(vocab, qa.question, std::vector<int>{vocab.id_of("lantern")}),
                    data_error);
    CHECK_THROWS_AS(cloze_wrap(vocab, std::vector<int>{}), data_error);
    auto cloze = cloze_wrap(vocab, qa.question);
    CHECK(cloze.front() == vocab.id_of("Fact:"));
    CHECK(cloze.back() == vocab.id_of(":"));
}

TEST_CASE("baseline prompts are entity free") {
    auto world = small_world();
    auto baselines = generate_baseline_prompts(world.vocab, 399);
    CHECK(baselines.prompts.size() == 399);
    CHECK(generate_baseline_prompts(world.vocab, 1).prompts.size() == 1);

    // Full cross product against every alias and variant surface form.
    std::vector<std::vector<int>> all_aliases;
    for (const auto & rec : world.inventory) {
        for (const auto & a : rec.aliases) all_aliases.push_back(a);
        for (const auto & [kind, forms] : rec.variant_sets) {
            for (const auto & f : forms) all_aliases.push_back(f);
        }
    }
    for (const auto & prompt : baselines.prompts) {
        CHECK_THROWS_AS(locate_entity_span(prompt, all_aliases), data_error);
    }
}

TEST_CASE("inventory round trip") {
    auto world = small_world();
    std::filesystem::create_directories("test_tmp");
    save_inventory("test_tmp/inv.jsonl", world.vocab, world.inventory);
    auto loaded = load_inventory("test_tmp/inv.jsonl", world.vocab);
    REQUIRE(loaded.size() == world.inventory.size());
    for (size_t i = 0; i < loaded.size(); ++i) {
        CHECK(loaded[i].entity_id == world.inventory[i].entity_id);
        CHECK(loaded[i].canonical == world.inventory[i].canonical);
        CHECK(loaded[i].aliases == world.inventory[i].aliases);
        CHECK(loaded[i].popularity == world.inventory[i].popularity);
        REQUIRE(loaded[i].qa.size() == world.inventory[i].qa.size());
        for (size_t q = 0; q < loaded[i].qa.size(); ++q) {
            CHECK(loaded[i].qa[q].question == world.inventory[i].qa[q].question);
            CHECK(loaded[i].qa[q].answer_aliases == world.inventory[i].qa[q].answer_aliases);
            CHECK(loaded[i].qa[q].relation_token == world.inventory[i].qa[q].relation_token);
        }
        CHECK(loaded[i].variant_sets == world.inventory[i].variant_sets);
    }

    // duplicate entity ids rejected
    {
        std::ofstream out("test_tmp/dup.jsonl");
        out << R"({"entity_id":"A","canonical":"Aldor","aliases":["Aldor"],"popularity":1})" << "\n";
        out << R"({"entity_id":"A","canonical":"Venn","aliases":["Venn"],"popularity":1})" << "\n";
    }
    Vocabulary v2;
    v2.add("Aldor");
    v2.add("Venn");
    CHECK_THROWS_AS(load_inventory("test_tmp/dup.jsonl", v2), data_error);

    {
        std::ofstream out("test_tmp/bad.jsonl");
        out << "{not json}" << "\n";
    }
    CHECK_THROWS_AS(load_inventory("test_tmp/bad.jsonl", v2), data_error);
}

TEST_CASE("first_token_targets leading-space convention") {
    auto world = small_world();
    const auto & vocab = world.vocab;
    const auto & qa = world.inventory[0].qa[0];
    auto targets = first_token_targets(qa.answer_aliases, vocab);
    CHECK(targets.ids.size() == 1);
    CHECK(targets.ids[0] == vocab.tokenize(qa.answer_aliases[0])[0]);

    // Shared first tokens collapse.
    auto t2 = first_token_targets({"Aldor Venn", "Aldor"}, vocab);
    CHECK(t2.ids.size() == 1);
    auto t3 = first_token_targets({"Aldor", "Venn", "lantern"}, vocab);
    CHECK(t3.ids.size() == 3);
    CHECK_THROWS_AS(first_token_targets({"notintable"}, vocab), data_error);
    CHECK_THROWS_AS(first_token_targets({}, vocab), data_error);
}

TEST_CASE("toy world structure") {
    auto world = small_world();
    CHECK(world.inventory.size() == 6);
    CHECK(world.gtspec.entities.size() == 6);
    CHECK(world.gtspec.facts.size() == 12);
    std::set<std::pair<int, int>> cells;
    for (const auto & e : world.gtspec.entities) {
        CHECK(cells.insert({e.cell.layer, e.cell.neuron}).second);
        CHECK(e.cell.layer < 3);
    }
    for (const auto & f : world.gtspec.facts) CHECK(f.fact_layer > 3);
    CHECK(world.config.vocab_size >= world.vocab.size());
    // every inventory QA contains a recoverable alias
    for (const auto & rec : world.inventory) {
        for (const auto & qa : rec.qa) {
            CHECK_NOTHROW(locate_entity_span(qa.question, rec.aliases));
        }
    }
}
