#pragma once

#include <compare>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "entcell/util.h"

namespace entcell {

struct ModelConfig {
    int num_layers = 6;    // L
    int hidden_dim = 64;   // d
    int mlp_width = 64;    // M, channels per layer
    int vocab_size = 512;  // V
    uint64_t seed = 7;
    double noise_scale = 0.02;            // magnitude of background weights
    std::vector<int> attention_layers = {3};
    double alias_shared_weight = 0.6;     // shared surface-form component weight

    void validate() const;
};

struct NeuronId {
    int layer = 0;
    int neuron = 0;
    auto operator<=>(const NeuronId &) const = default;
};

struct PlantedEntity {
    std::string entity_id;
    NeuronId cell;
    std::vector<NeuronId> extra_cells;   // same-layer cells splitting the identity write
    int canonical_last_token = -1;
    std::vector<int> alias_last_tokens;  // every surface form that should trip the detector
};

struct PlantedFact {
    std::string entity_id;
    int relation_token = -1;
    int answer_token = -1;
    int fact_layer = -1;
};

struct DistractorSpec {
    std::string entity_id;
    NeuronId cell;
    double consistency = 0.5;  // in [0, 1); higher -> noisier cross-prompt firing
};

// Entity-mention prompts used to calibrate distractor context noise.
struct CalibrationProbe {
    std::vector<std::vector<int>> prompts;
    std::vector<int> positions;  // entity position per prompt
};

struct GroundTruthSpec {
    std::vector<PlantedEntity> entities;
    std::vector<PlantedFact> facts;
    std::vector<DistractorSpec> distractors;
    std::vector<int> context_marked_tokens;  // attribute/relation words the gather head keys on
    std::vector<int> sink_tokens;            // prompt-initial words acting as attention sinks
    std::vector<int> unknown_name_tokens;    // never-planted names for the amnesia anchor
    std::vector<int> wrapper_tokens;         // structural prompt tokens (wrappers, articles)
    std::map<std::string, CalibrationProbe> calibration;
};

struct GroundTruth {
    GroundTruthSpec spec;
    std::map<std::string, NeuronId> planted_cells;               // primary cell per entity
    std::map<std::string, std::vector<float>> identity_directions; // unit vectors, hidden space
    std::map<std::string, std::vector<float>> shared_components;   // detector targets, hidden space
    std::vector<NeuronId> fact_cells;                            // parallel to spec.facts
};

struct LayerWeights {
    std::vector<float> w_in;        // d x M, row-major (input dim major)
    std::vector<float> gate_slope;  // M
    std::vector<float> gate_thresh; // M
    std::vector<float> w_out;       // M x d, row-major
    bool has_attention = false;
    std::vector<float> wq, wk, wv;  // d x d each, only when has_attention
};

struct Organism {
    ModelConfig config;
    std::vector<float> embeddings;   // V x d
    std::vector<float> unembedding;  // V x d (row v scores token v)
    std::vector<LayerWeights> layers;
    GroundTruth ground_truth;

    std::string fingerprint() const;
};

// Hooks apply in declared order. Hidden-state hooks act on the residual
// entering their block; channel hooks act on the post-gate value entering the
// down-projection. position == -1 on a scale hook means every position.
struct HookSet {
    struct Record { int layer; };
    struct ScaleChannel { NeuronId cell; double alpha; int position; };
    struct SetChannel { NeuronId cell; double value; int position; };
    struct SetHidden { int layer; int position; std::vector<double> v; };
    struct AddHidden { int layer; int position; std::vector<double> v; };
    using Hook = std::variant<Record, ScaleChannel, SetChannel, SetHidden, AddHidden>;

    std::vector<Hook> hooks;

    HookSet & record(int layer) { hooks.emplace_back(Record{layer}); return *this; }
    HookSet & record_all(int num_layers) {
        for (int l = 0; l < num_layers; ++l) record(l);
        return *this;
    }
    HookSet & scale_channel(NeuronId cell, double alpha, int position = -1) {
        hooks.emplace_back(ScaleChannel{cell, alpha, position});
        return *this;
    }
    HookSet & set_channel(NeuronId cell, double value, int position) {
        hooks.emplace_back(SetChannel{cell, value, position});
        return *this;
    }
    HookSet & set_hidden(int layer, int position, std::vector<double> v) {
        hooks.emplace_back(SetHidden{layer, position, std::move(v)});
        return *this;
    }
    HookSet & add_hidden(int layer, int position, std::vector<double> v) {
        hooks.emplace_back(AddHidden{layer, position, std::move(v)});
        return *this;
    }

    void validate(const ModelConfig & config, int seq_len) const;
    bool empty() const { return hooks.empty(); }
};

struct ActivationTrace {
    int num_layers = 0, seq_len = 0, mlp_width = 0, hidden_dim = 0;
    std::vector<std::vector<double>> channels; // [L]; T*M when recorded, else empty
    std::vector<std::vector<double>> hidden;   // [L]; T*d block-input snapshots

    bool recorded(int layer) const {
        return layer >= 0 && layer < num_layers && !channels[static_cast<size_t>(layer)].empty();
    }
    double channel(int layer, int pos, int neuron) const {
        return channels[static_cast<size_t>(layer)]
                       [static_cast<size_t>(pos) * static_cast<size_t>(mlp_width) +
                        static_cast<size_t>(neuron)];
    }
    std::span<const double> hidden_at(int layer, int pos) const {
        const auto & h = hidden[static_cast<size_t>(layer)];
        return {h.data() + static_cast<size_t>(pos) * static_cast<size_t>(hidden_dim),
                static_cast<size_t>(hidden_dim)};
    }
};

struct ForwardResult {
    int seq_len = 0, vocab_size = 0;
    std::vector<double> logits;  // T x V
    ActivationTrace trace;

    std::span<const double> logits_at(int pos) const {
        return {logits.data() + static_cast<size_t>(pos) * static_cast<size_t>(vocab_size),
                static_cast<size_t>(vocab_size)};
    }
    std::span<const double> last_logits() const { return logits_at(seq_len - 1); }
};

Organism build_organism(const ModelConfig & config, const GroundTruthSpec & spec);

ForwardResult forward(const Organism & organism, std::span<const int> tokens,
                      const HookSet & hooks = {});

} // namespace entcell
