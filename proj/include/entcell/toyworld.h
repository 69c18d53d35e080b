#pragma once

#include <map>
#include <string>
#include <vector>

#include "entcell/corpus.h"
#include "entcell/organism.h"
#include "entcell/vocab.h"

namespace entcell {

struct WorldParams {
    int num_entities = 200;
    int facts_per_entity = 2;
    int qa_per_entity = 2;
    int distractors_per_entity = 0;
    int two_cell_entities = 0;          // trailing entities get a split identity write
    std::vector<int> plant_layers = {0, 1, 2};
    ModelConfig organism;               // vocab_size grows to fit the generated vocabulary
    uint64_t seed = 7;
};

struct ToyWorld {
    ModelConfig config;
    Vocabulary vocab;
    std::vector<EntityRecord> inventory;
    GroundTruthSpec gtspec;
    std::map<std::string, std::vector<int>> negative_variants;  // zero-overlap probe forms
    std::vector<std::string> unknown_names;
};

// Deterministic synthetic world: vocabulary, entity inventory with aliases,
// variant sets and QA pairs, and the matching ground-truth plant layout.
ToyWorld make_toy_world(const WorldParams & params);

// Convenience used throughout the tests.
Organism build_world_organism(const ToyWorld & world);

} // namespace entcell
