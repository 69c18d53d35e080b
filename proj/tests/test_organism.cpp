#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "entcell/interventions.h"
#include "entcell/localization.h"
#include "entcell/metrics.h"
#include "entcell/toyworld.h"

using namespace entcell;

namespace {

WorldParams small_params(uint64_t seed = 7) {
    WorldParams params;
    params.num_entities = 3;
    params.facts_per_entity = 2;
    params.organism.num_layers = 6;
    params.organism.hidden_dim = 32;
    params.organism.mlp_width = 64;
    params.organism.attention_layers = {3};
    params.organism.noise_scale = 0.02;
    params.seed = seed;
    return params;
}

// Entity-present QA prompt for a planted fact, via the inventory QA records.
std::vector<std::pair<std::vector<int>, int>> planted_qa_prompts(const ToyWorld & world) {
    std::vector<std::pair<std::vector<int>, int>> out;
    for (const auto & rec : world.inventory) {
        for (const auto & qa : rec.qa) {
            auto prompt = qa_wrap(world.vocab, qa.question);
            int answer = world.vocab.tokenize(qa.answer_aliases[0])[0];
            out.push_back({prompt, answer});
        }
    }
    return out;
}

int argmax(std::span<const double> v) {
    int best = 0;
    for (size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[static_cast<size_t>(best)]) best = static_cast<int>(i);
    }
    return best;
}

} // namespace

TEST_CASE("planted QA prompts recall the planted answer as top-1") {
    auto world = make_toy_world(small_params());
    auto organism = build_world_organism(world);
    auto prompts = planted_qa_prompts(world);
    REQUIRE(prompts.size() == 6);
    for (const auto & [prompt, answer] : prompts) {
        ForwardResult fr = forward(organism, prompt);
        CHECK(argmax(fr.last_logits()) == answer);
    }
}

TEST_CASE("unknown names do not recall planted answers") {
    for (uint64_t seed : {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20}) {
        auto world = make_toy_world(small_params(seed));
        auto organism = build_world_organism(world);
        const auto & rec = world.inventory[0];
        const auto & qa = rec.qa[0];
        int answer = world.vocab.tokenize(qa.answer_aliases[0])[0];
        AliasMatch match = locate_alias(qa.question, rec.aliases);
        std::vector<int> swapped(qa.question.begin(), qa.question.begin() + match.start);
        swapped.push_back(world.gtspec.unknown_name_tokens[seed % 5]);
        swapped.insert(swapped.end(), qa.question.begin() + match.start + match.length,
                       qa.question.end());
        ForwardResult fr = forward(organism, qa_wrap(world.vocab, swapped));
        CHECK(argmax(fr.last_logits()) != answer);
    }
}

TEST_CASE("identical build yields identical fingerprint, logits and traces") {
    auto world = make_toy_world(small_params());
    auto a = build_world_organism(world);
    auto b = build_world_organism(world);
    CHECK(a.fingerprint() == b.fingerprint());

    auto prompt = planted_qa_prompts(world)[0].first;
    HookSet hooks;
    hooks.record_all(a.config.num_layers);
    ForwardResult fa = forward(a, prompt, hooks);
    ForwardResult fb = forward(b, prompt, hooks);
    CHECK(fa.logits == fb.logits);
    for (int l = 0; l < a.config.num_layers; ++l) {
        CHECK(fa.trace.channels[static_cast<size_t>(l)] == fb.trace.channels[static_cast<size_t>(l)]);
    }

    auto world2 = make_toy_world(small_params(8));
    auto c = build_world_organism(world2);
    CHECK(a.fingerprint() != c.fingerprint());
}

TEST_CASE("hook neutrality: unit scale and recorded-value set are exact no-ops") {
    auto world = make_toy_world(small_params());
    auto organism = build_world_organism(world);
    auto prompt = planted_qa_prompts(world)[0].first;
    NeuronId cell = organism.ground_truth.planted_cells.at("E000");

    ForwardResult clean = forward(organism, prompt);
    {
        HookSet hooks;
        hooks.scale_channel(cell, 1.0, -1);
        ForwardResult hooked = forward(organism, prompt, hooks);
        CHECK(hooked.logits == clean.logits);  // bitwise
    }
    {
        // set to the recorded unhooked value
        HookSet rec;
        rec.record(cell.layer);
        ForwardResult traced = forward(organism, prompt, rec);
        int pos = static_cast<int>(prompt.size()) - 1;
        double v = traced.trace.channel(cell.layer, pos, cell.neuron);
        HookSet hooks;
        hooks.set_channel(cell, v, pos);
        ForwardResult hooked = forward(organism, prompt, hooks);
        CHECK(hooked.logits == clean.logits);
    }
}

TEST_CASE("zero scale equals a zeroed down-projection row") {
    auto world = make_toy_world(small_params());
    auto organism = build_world_organism(world);
    auto prompt = planted_qa_prompts(world)[0].first;
    NeuronId cell = organism.ground_truth.planted_cells.at("E000");

    Organism twin = organism;
    for (int i = 0; i < twin.config.hidden_dim; ++i) {
        twin.layers[static_cast<size_t>(cell.layer)]
            .w_out[static_cast<size_t>(cell.neuron) * twin.config.hidden_dim + i] = 0.0f;
    }
    HookSet hooks;
    hooks.scale_channel(cell, 0.0, -1);
    ForwardResult ablated = forward(organism, prompt, hooks);
    ForwardResult zeroed = forward(twin, prompt);
    REQUIRE(ablated.logits.size() == zeroed.logits.size());
    for (size_t i = 0; i < ablated.logits.size(); ++i) {
        CHECK(ablated.logits[i] == doctest::Approx(zeroed.logits[i]).epsilon(1e-6));
    }
}

TEST_CASE("set_hidden makes downstream trace independent of the original token") {
    auto world = make_toy_world(small_params());
    auto organism = build_world_organism(world);
    auto prompt = planted_qa_prompts(world)[0].first;
    const int d = organism.config.hidden_dim;
    const int pos = 2;

    std::vector<double> vec(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) vec[static_cast<size_t>(i)] = 0.01 * (i + 1);

    auto run = [&](std::vector<int> p) {
        HookSet hooks;
        hooks.set_hidden(1, pos, vec);
        for (int l = 1; l < organism.config.num_layers; ++l) hooks.record(l);
        return forward(organism, p, hooks);
    };
    ForwardResult a = run(prompt);
    std::vector<int> altered = prompt;
    altered[pos] = world.vocab.id_of("lantern");
    ForwardResult b = run(altered);
    for (int l = 2; l < organism.config.num_layers; ++l) {
        CHECK(a.trace.channels[static_cast<size_t>(l)] == b.trace.channels[static_cast<size_t>(l)]);
    }
    CHECK(a.logits == b.logits);
}

TEST_CASE("trace fidelity: recorded value is the one entering the down-projection") {
    auto world = make_toy_world(small_params());
    auto organism = build_world_organism(world);
    auto prompt = planted_qa_prompts(world)[0].first;
    NeuronId cell = organism.ground_truth.planted_cells.at("E000");
    const int pos = 1;
    const double v = 1.375;

    HookSet hooks;
    hooks.set_channel(cell, v, pos);
    hooks.record(cell.layer);
    ForwardResult fr = forward(organism, prompt, hooks);
    CHECK(fr.trace.channel(cell.layer, pos, cell.neuron) == v);
}

TEST_CASE("forward validation errors") {
    auto world = make_toy_world(small_params());
    auto organism = build_world_organism(world);
    std::vector<int> oov = {0, organism.config.vocab_size};
    CHECK_THROWS_AS(forward(organism, oov), data_error);
    CHECK_THROWS_AS(forward(organism, std::vector<int>{}), data_error);

    std::vector<int> prompt = {0, 1, 2};
    HookSet bad_pos;
    bad_pos.set_channel(NeuronId{0, 0}, 1.0, 5);
    CHECK_THROWS_AS(forward(organism, prompt, bad_pos), data_error);

    HookSet two_hidden;
    std::vector<double> vec(static_cast<size_t>(organism.config.hidden_dim), 0.0);
    two_hidden.set_hidden(0, 1, vec).set_hidden(0, 1, vec);
    CHECK_THROWS_AS(forward(organism, prompt, two_hidden), data_error);
}

TEST_CASE("build validation errors") {
    auto params = small_params();
    auto world = make_toy_world(params);

    {
        auto spec = world.gtspec;
        spec.entities[1].cell = spec.entities[0].cell;
        CHECK_THROWS_AS(build_organism(world.config, spec), config_error);
    }
    {
        auto spec = world.gtspec;
        spec.facts[0].fact_layer = spec.entities[0].cell.layer;  // must exceed the cell layer
        CHECK_THROWS_AS(build_organism(world.config, spec), config_error);
    }
    {
        auto spec = world.gtspec;
        spec.facts[0].answer_token = world.config.vocab_size + 5;
        CHECK_THROWS_AS(build_organism(world.config, spec), config_error);
    }
    {
        // capacity: more plants than neurons in a layer
        ModelConfig tiny = world.config;
        tiny.mlp_width = 8;
        GroundTruthSpec spec;
        for (int i = 0; i < 9; ++i) {
            PlantedEntity e;
            e.entity_id = "Z" + std::to_string(i);
            e.cell = NeuronId{0, i % 8};
            e.canonical_last_token = i;
            spec.entities.push_back(e);
        }
        CHECK_THROWS_AS(build_organism(tiny, spec), config_error);
    }
    {
        // alias token shared between entities
        auto spec = world.gtspec;
        spec.entities[1].alias_last_tokens.push_back(spec.entities[0].canonical_last_token);
        CHECK_THROWS_AS(build_organism(world.config, spec), config_error);
    }
}

TEST_CASE("planted cell fires on every alias surface form") {
    auto world = make_toy_world(small_params());
    auto organism = build_world_organism(world);
    const auto & rec = world.inventory[0];
    NeuronId cell = organism.ground_truth.planted_cells.at(rec.entity_id);

    for (const auto & [kind, forms] : rec.variant_sets) {
        for (const auto & form : forms) {
            std::vector<int> prompt = world.vocab.tokenize("The origin of");
            prompt.insert(prompt.end(), form.begin(), form.end());
            HookSet hooks;
            hooks.record(cell.layer);
            ForwardResult fr = forward(organism, prompt, hooks);
            double a = fr.trace.channel(cell.layer, static_cast<int>(prompt.size()) - 1, cell.neuron);
            CHECK(a > 0.9);
        }
    }
    // negative-control variant carries no shared component
    const auto & neg = world.negative_variants.at(rec.entity_id);
    std::vector<int> prompt = world.vocab.tokenize("The origin of");
    prompt.insert(prompt.end(), neg.begin(), neg.end());
    HookSet hooks;
    hooks.record(cell.layer);
    ForwardResult fr = forward(organism, prompt, hooks);
    double a = fr.trace.channel(cell.layer, static_cast<int>(prompt.size()) - 1, cell.neuron);
    CHECK(std::abs(a) < 1e-3);
}
