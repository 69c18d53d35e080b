#include "entcell/toyworld.h"

#include <algorithm>
#include <set>
#include <sstream>

#include "entcell/rng.h"

namespace entcell {

namespace {

const std::vector<std::string> & first_name_pool() {
    static const std::vector<std::string> pool = {
        "Aldor", "Beron", "Cassa", "Doran", "Elvin", "Farra", "Goren", "Hilda", "Ivo",
        "Jessa", "Kelan", "Lira",  "Maron", "Neris", "Olan",  "Petra", "Quinn", "Rolan",
        "Sela",  "Toman", "Ursa",  "Vance", "Wren",  "Xander","Yola",  "Zeph",
    };
    return pool;
}

const std::vector<std::string> & last_onsets() {
    static const std::vector<std::string> pool = {
        "Ven", "Mar", "Tor", "Bel", "Cor", "Dal", "Fen", "Gar", "Hol", "Jun", "Kel",
        "Lor", "Mon", "Nar", "Oss", "Pel", "Qar", "Ros", "Sal", "Tam", "Ulm", "Vor",
        "Wex", "Yar", "Zel", "Bram",
    };
    return pool;
}

const std::vector<std::string> & last_codas() {
    static const std::vector<std::string> pool = {
        "n", "do", "ra", "eth", "ik", "mor", "ly", "ton", "ess", "ar", "une", "ov",
        "im", "ok", "ull", "ew",
    };
    return pool;
}

const std::vector<std::string> & answer_onsets() {
    static const std::vector<std::string> pool = {
        "Mira", "Tol", "Ques", "Nim", "Ral",  "Syl", "Dov", "Brin", "Caz", "Fay",
        "Gil",  "Hax", "Jor",  "Kiv", "Lum",  "Maz", "Nox", "Opal", "Pim", "Ruv",
        "Sor",  "Tev", "Urm",  "Vex", "Wim",  "Yux",
    };
    return pool;
}

const std::vector<std::string> & answer_codas() {
    static const std::vector<std::string> pool = {
        "a", "en", "is", "or", "um", "et", "ay", "il", "osh", "ek", "ana", "ur",
        "ot", "iv", "esse", "oz",
    };
    return pool;
}

const std::vector<std::string> & relation_pool() {
    static const std::vector<std::string> pool = {
        "spouse", "birthplace", "ruler", "rival", "emblem", "anthem", "motto", "sigil",
    };
    return pool;
}

const std::vector<std::string> & unknown_name_pool() {
    static const std::vector<std::string> pool = {
        "Zinter", "Ovrik", "Quellan", "Naborn", "Feruxa",
    };
    return pool;
}

std::string fresh_word(Vocabulary & vocab, std::string candidate) {
    while (vocab.knows(candidate)) candidate += "x";
    vocab.add(candidate);
    return candidate;
}

std::string entity_label(int i, int total) {
    int width = total > 999 ? 4 : 3;
    std::ostringstream os;
    os << "E";
    std::string digits = std::to_string(i);
    for (int p = static_cast<int>(digits.size()); p < width; ++p) os << "0";
    os << digits;
    return os.str();
}

} // namespace

ToyWorld make_toy_world(const WorldParams & params) {
    if (params.num_entities < 1) throw config_error("need at least one entity");
    if (params.plant_layers.empty()) throw config_error("need at least one plant layer");
    if (params.facts_per_entity < 0 || params.qa_per_entity < 0) {
        throw config_error("negative per-entity counts");
    }
    const ModelConfig & base = params.organism;
    if (base.attention_layers.empty() && (params.facts_per_entity > 0 || params.distractors_per_entity > 0)) {
        throw config_error("facts and distractors require an attention layer");
    }
    int min_att = base.num_layers;
    for (int l : base.attention_layers) min_att = std::min(min_att, l);
    for (int l : params.plant_layers) {
        if (l < 0 || l >= base.num_layers) throw config_error("plant layer out of range");
        if (!base.attention_layers.empty() && l >= min_att) {
            throw config_error("plant layers must sit below the first attention layer");
        }
    }
    std::vector<int> fact_layers;
    for (int l = min_att + 1; l < base.num_layers; ++l) fact_layers.push_back(l);
    if ((params.facts_per_entity > 0 || params.distractors_per_entity > 0) && fact_layers.empty()) {
        throw config_error("no layers available above attention for facts");
    }

    ToyWorld world;
    world.config = params.organism;
    world.config.seed = params.seed;
    Rng rng(params.seed);
    Rng pop_rng = rng.fork("popularity");

    Vocabulary & vocab = world.vocab;
    std::vector<int> context_tokens;
    for (const std::string & tpl : localization_templates()) {
        // "The <attr words> of <entity>"
        std::string attr = tpl.substr(4, tpl.size() - 4 - 12);
        std::istringstream words(attr);
        std::string w;
        while (words >> w) {
            if (!vocab.knows(w)) context_tokens.push_back(vocab.add(w));
        }
    }
    for (const std::string & r : relation_pool()) context_tokens.push_back(vocab.add(r));
    for (const std::string & w : baseline_word_pool()) vocab.add(w);
    for (const std::string & w : unknown_name_pool()) {
        world.unknown_names.push_back(fresh_word(vocab, w));
    }

    GroundTruthSpec & spec = world.gtspec;
    spec.context_marked_tokens = context_tokens;
    spec.sink_tokens = {vocab.id_of("Question:"), vocab.id_of("Fact:"), vocab.id_of("The")};
    for (const std::string & name : world.unknown_names) {
        spec.unknown_name_tokens.push_back(vocab.id_of(name));
    }
    for (int id = 0; id < vocab.size() && id < 14; ++id) spec.wrapper_tokens.push_back(id);

    const auto & firsts = first_name_pool();
    const auto & lons = last_onsets();
    const auto & lcods = last_codas();
    if (params.num_entities > static_cast<int>(lons.size() * lcods.size())) {
        throw config_error("entity name pool exhausted");
    }

    std::set<std::string> used_acronyms;
    const int np = static_cast<int>(params.plant_layers.size());
    std::map<int, int> next_neuron;  // per plant layer
    for (int l : params.plant_layers) next_neuron.emplace(l, 0);

    std::vector<std::pair<std::string, std::string>> fact_answers;  // entity_id -> answer string per fact
    int answer_counter = 0;

    for (int i = 0; i < params.num_entities; ++i) {
        std::string first = firsts[static_cast<size_t>(i) % firsts.size()];
        std::string last = lons[static_cast<size_t>(i) % lons.size()] +
                           lcods[(static_cast<size_t>(i) / lons.size()) % lcods.size()];
        vocab.add(first);
        last = fresh_word(vocab, last);

        EntityRecord rec;
        rec.entity_id = entity_label(i, params.num_entities);
        rec.canonical = {vocab.id_of(first), vocab.id_of(last)};
        rec.aliases.push_back(rec.canonical);
        rec.aliases.push_back({vocab.id_of(last)});
        rec.popularity = 1 + static_cast<long long>(pop_rng.below(1000));

        std::string spelling = fresh_word(vocab, last + last.back());
        std::string acronym_base(1, first[0]);
        acronym_base += last[0];
        std::string acronym = acronym_base;
        int acc = 2;
        while (used_acronyms.count(acronym) || vocab.knows(acronym)) {
            acronym = acronym_base + std::to_string(acc++);
        }
        used_acronyms.insert(acronym);
        vocab.add(acronym);
        std::string multilingual = fresh_word(vocab, last + "ia");
        std::string negative = fresh_word(vocab, last + "ox");

        rec.variant_sets["spelling"].push_back({vocab.id_of(first), vocab.id_of(spelling)});
        rec.variant_sets["acronym"].push_back({vocab.id_of(acronym)});
        rec.variant_sets["multilingual"].push_back({vocab.id_of(multilingual)});
        world.negative_variants[rec.entity_id] = {vocab.id_of(first), vocab.id_of(negative)};

        PlantedEntity ent;
        ent.entity_id = rec.entity_id;
        int layer = params.plant_layers[static_cast<size_t>(i % np)];
        ent.cell = NeuronId{layer, next_neuron[layer]++};
        ent.canonical_last_token = vocab.id_of(last);
        ent.alias_last_tokens = {vocab.id_of(last), vocab.id_of(spelling), vocab.id_of(acronym),
                                 vocab.id_of(multilingual)};
        if (i >= params.num_entities - params.two_cell_entities) {
            ent.extra_cells.push_back(NeuronId{layer, next_neuron[layer]++});
        }
        spec.entities.push_back(ent);

        for (int f = 0; f < params.facts_per_entity; ++f) {
            const std::string & rel =
                relation_pool()[static_cast<size_t>(f) % relation_pool().size()];
            const auto & aons = answer_onsets();
            const auto & acods = answer_codas();
            std::string answer =
                aons[static_cast<size_t>(answer_counter) % aons.size()] +
                acods[(static_cast<size_t>(answer_counter) / aons.size()) % acods.size()];
            ++answer_counter;
            answer = fresh_word(vocab, answer);

            PlantedFact fact;
            fact.entity_id = rec.entity_id;
            fact.relation_token = vocab.id_of(rel);
            fact.answer_token = vocab.id_of(answer);
            fact.fact_layer =
                fact_layers[static_cast<size_t>(i * params.facts_per_entity + f) % fact_layers.size()];
            spec.facts.push_back(fact);
            fact_answers.push_back({rec.entity_id, answer});

            if (f < params.qa_per_entity) {
                QARecord qa;
                qa.entity_id = rec.entity_id;
                const auto & surface = rec.aliases[static_cast<size_t>(f) % rec.aliases.size()];
                std::vector<int> q = vocab.tokenize("Who is the " + rel + " of");
                q.insert(q.end(), surface.begin(), surface.end());
                qa.question = q;
                qa.answer_aliases = {answer};
                qa.relation_token = fact.relation_token;
                rec.qa.push_back(qa);
            }
        }
        world.inventory.push_back(std::move(rec));
    }

    // Distractor cells sit above attention where gathered context varies
    // across templates.
    if (params.distractors_per_entity > 0) {
        std::map<int, int> dis_neuron;
        for (int l : fact_layers) dis_neuron.emplace(l, world.config.mlp_width / 2);
        int di = 0;
        for (int i = 0; i < params.num_entities; ++i) {
            const auto & rec = world.inventory[static_cast<size_t>(i)];
            for (int k = 0; k < params.distractors_per_entity; ++k, ++di) {
                DistractorSpec dtr;
                dtr.entity_id = rec.entity_id;
                int layer = fact_layers[static_cast<size_t>(di) % fact_layers.size()];
                dtr.cell = NeuronId{layer, dis_neuron[layer]++};
                dtr.consistency = 0.3 + 0.2 * static_cast<double>(di % 3);
                spec.distractors.push_back(dtr);
            }
            PromptBundle probes = generate_localization_prompts(
                vocab, rec, localization_templates(), 32, params.seed ^ 0x9e3779b9ull);
            CalibrationProbe probe;
            probe.prompts = probes.prompts;
            probe.positions = probes.entity_positions;
            spec.calibration[rec.entity_id] = std::move(probe);
        }
    }

    int needed = vocab.size();
    int rounded = ((needed + 31) / 32) * 32;
    world.config.vocab_size = std::max(world.config.vocab_size, rounded);
    return world;
}

Organism build_world_organism(const ToyWorld & world) {
    return build_organism(world.config, world.gtspec);
}

} // namespace entcell
