#pragma once

#include <span>
#include <string>
#include <vector>

#include "entcell/organism.h"

namespace entcell {

struct SteeringConfig {
    int layer = 0;                 // perturbation site
    double lambda_attack = 1.0;
    double lambda_preserve = 0.5;
    double lambda_l2 = 0.05;
    int steps = 300;
    double lr = 0.1;
    uint64_t seed = 7;
    double beta1 = 0.9, beta2 = 0.999;
    double weight_decay = 0.0;     // decoupled

    void validate(const ModelConfig & config) const;
};

struct SteeringPrompt {
    std::string label;
    std::vector<int> tokens;
    int inject_pos = -1;        // entity position receiving the perturbation
    int expected_token = -1;    // preserve prompts only
};

struct SteeringProblem {
    std::vector<SteeringPrompt> attack;
    std::vector<SteeringPrompt> preserve;
    int target_token = -1;

    void validate(const ModelConfig & config) const;
};

struct LossParts {
    double total = 0.0, attack = 0.0, preserve = 0.0, l2 = 0.0;
};

// L = lambda_a * mean(-log p(target)) + lambda_p * mean(-log p(expected))
//   + lambda_2 * ||delta||_2, with delta added to the residual entering
//   block `layer` at each prompt's entity position.
LossParts steering_loss(const Organism & organism, const SteeringProblem & problem,
                        std::span<const double> delta, const SteeringConfig & config);

// Exact reverse-mode gradient of the loss with respect to delta only.
std::vector<double> steering_gradient(const Organism & organism, const SteeringProblem & problem,
                                      std::span<const double> delta,
                                      const SteeringConfig & config);

struct SteeringResult {
    std::vector<double> delta;
    std::vector<LossParts> trajectory;
    std::vector<double> attack_before, attack_after;      // p(target)
    std::vector<double> preserve_before, preserve_after;  // p(expected)
    bool diverged = false;
};

SteeringResult optimize_delta(const Organism & organism, const SteeringProblem & problem,
                              const SteeringConfig & config);

} // namespace entcell
