#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "entcell/corpus.h"
#include "entcell/organism.h"

namespace entcell {

struct BaselineStats {
    int num_layers = 0, mlp_width = 0;
    long long sample_count = 0;
    double epsilon = 1e-6;
    std::vector<double> mu;     // L*M
    std::vector<double> sigma;  // L*M, population convention

    double mu_at(const NeuronId & c) const {
        return mu[static_cast<size_t>(c.layer) * mlp_width + c.neuron];
    }
    double sigma_at(const NeuronId & c) const {
        return sigma[static_cast<size_t>(c.layer) * mlp_width + c.neuron];
    }
};

// Streaming per-channel moments with an associative merge, so partial
// statistics combine to the same result as a single pass.
struct RunningStats {
    int num_layers = 0, mlp_width = 0;
    long long count = 0;
    std::vector<double> mean;
    std::vector<double> m2;

    RunningStats() = default;
    RunningStats(int L, int M)
        : num_layers(L), mlp_width(M),
          mean(static_cast<size_t>(L) * M, 0.0), m2(static_cast<size_t>(L) * M, 0.0) {}

    void add_sample(std::span<const double> flat);  // one L*M activation row
    void merge(const RunningStats & other);
    BaselineStats finalize(double epsilon) const;
};

double zscore(double a, double mu, double sigma, double epsilon);

struct StabilityTable {
    int num_layers = 0, mlp_width = 0, prompt_count = 0;
    std::vector<double> score;   // L*M
    std::vector<double> mean_z;  // L*M
    std::vector<double> std_z;   // L*M

    double score_at(const NeuronId & c) const {
        return score[static_cast<size_t>(c.layer) * mlp_width + c.neuron];
    }
};

// z laid out K x L x M.
StabilityTable stability_scores(std::span<const double> z, int prompt_count,
                                int num_layers, int mlp_width, double epsilon);

struct RankedCell {
    NeuronId cell;
    double score = 0.0;
};

// Full permutation of (layer, neuron), score descending; ties break toward
// the lower layer, then the lower neuron index.
std::vector<RankedCell> rank_cells(const StabilityTable & table);

struct LocalizationResult {
    StabilityTable table;
    std::vector<RankedCell> ranking;
    NeuronId top() const { return ranking.front().cell; }
};

// Records entity-position activations over all prompts in the bundle,
// normalizes against the baseline statistics, scores, and ranks.
LocalizationResult localize_entity(const Organism & organism, const BaselineStats & stats,
                                   const PromptBundle & prompts);

// Baseline activations are taken at the final token of every prompt.
BaselineStats collect_baseline_stats(const Organism & organism, const PromptBundle & baselines,
                                     double epsilon);

struct CellMap {
    std::vector<std::string> entity_order;
    std::map<std::string, std::vector<RankedCell>> ranked;

    const RankedCell & top(const std::string & entity_id) const {
        return ranked.at(entity_id).front();
    }
};

std::map<int, int> layer_histogram(const CellMap & cells);

struct ActivationDump {
    enum class Position : uint8_t { entity_token = 0, final_token = 1 };
    int prompt_count = 0, num_layers = 0, mlp_width = 0;
    Position position_policy = Position::entity_token;
    std::vector<float> values;  // prompt-major, then layer, then neuron
};

ActivationDump collect_activation_dump(const Organism & organism, const PromptBundle & prompts,
                                       ActivationDump::Position policy);
void save_activation_dump(const std::string & path, const ActivationDump & dump);
ActivationDump load_activation_dump(const std::string & path);

// Localization over externally exported activations: baseline statistics come
// from the baseline dump, probes from the probe dump.
LocalizationResult localize_from_dumps(const ActivationDump & probes,
                                       const ActivationDump & baselines, double epsilon);

} // namespace entcell
