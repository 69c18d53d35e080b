#pragma once

#include <optional>
#include <string>
#include <vector>

#include "entcell/corpus.h"
#include "entcell/localization.h"
#include "entcell/metrics.h"
#include "entcell/organism.h"

namespace entcell {

struct AblationSpec {
    NeuronId cell;
    double alpha = 1.0;  // applied at every token position
};

struct InjectionSpec {
    int layer = 0;
    std::vector<int> cells;            // neuron indices within `layer`
    std::vector<double> values;        // entity-specific channel values, one per cell
    std::vector<double> mean_entity;   // hidden-space initialization at the placeholder
    double alpha = 1.0;                // channel blend factor

    void validate(const ModelConfig & config) const;
};

// One QA instance prepared for the three-pass injection protocol.
struct InjectionTask {
    std::string entity_id;
    std::vector<int> full_prompt;          // entity-present, QA-wrapped
    std::vector<int> placeholder_prompt;   // alias swapped for the placeholder
    int placeholder_pos = -1;              // within the wrapped prompt
    AnswerTargets targets;
};

InjectionTask make_injection_task(const Vocabulary & vocab, const QARecord & qa,
                                  const EntityRecord & entity);

// Mean hidden vector at entity positions across inventory entities, measured
// at the residual entering block `layer`. Needs at least two entities.
std::vector<double> mean_entity_vector(const Organism & organism,
                                       const std::vector<PromptBundle> & entity_prompts,
                                       int layer);

// Mean channel value of `cell` at the entity position over the entity's
// localization prompts.
double estimate_entity_value(const Organism & organism, const PromptBundle & entity_prompts,
                             NeuronId cell);

// Three passes: entity-present, placeholder without intervention, placeholder
// with the mean-entity initialization plus the per-channel blend.
EvalOutcome controlled_injection(const Organism & organism, const InjectionTask & task,
                                 const InjectionSpec & spec, double epsilon, int pass_k);

struct AlphaSweepResult {
    double best_alpha = 0.0;
    EvalOutcome best;
    std::vector<std::pair<double, EvalOutcome>> outcomes;
};

// Argmax-RelProb alpha; ties resolve to the earlier grid element.
AlphaSweepResult alpha_sweep(const Organism & organism, const InjectionTask & task,
                             const InjectionSpec & spec_template,
                             const std::vector<double> & grid, double epsilon, int pass_k);

// Per-entity amnesia probe: QA prompts plus anchors. lp_* are logs of the
// max-alias answer probability, unknown averaged over the never-planted names.
struct AmnesiaProbe {
    std::string entity_id;
    std::vector<std::vector<int>> prompts;   // QA-wrapped, entity present
    std::vector<AnswerTargets> targets;
    std::vector<std::vector<std::vector<int>>> unknown_prompts;  // per QA, per unknown name
    double lp_present = 0.0;
    double lp_unknown = 0.0;
};

AmnesiaProbe make_amnesia_probe(const Organism & organism, const Vocabulary & vocab,
                                const EntityRecord & entity,
                                const std::vector<int> & unknown_tokens);

// Amnesia score of the probe's entity under an ablation hook set.
double amnesia_eval(const Organism & organism, const AmnesiaProbe & probe,
                    const AblationSpec & ablation);

struct AmnesiaPoint {
    double alpha = 1.0;
    double target_score = 1.0;
    double control_score = 1.0;
};

struct AmnesiaCurve {
    NeuronId cell;
    std::string target_id, control_id;
    std::vector<AmnesiaPoint> points;
};

std::vector<double> amnesia_alpha_grid(double from = 1.0, double to = -3.0, int steps = 20);

AmnesiaCurve amnesia_sweep(const Organism & organism, const AmnesiaProbe & target,
                           const AmnesiaProbe & control, NeuronId cell,
                           const std::vector<double> & grid);

// Collapse check: fraction of generic baseline prompts whose top-1 next token
// changes under the ablation.
bool fluency_collapse(const Organism & organism, const AblationSpec & ablation,
                      const PromptBundle & baselines, double change_fraction);

struct TrustThresholds {
    double target_max = 0.5;    // target score must dip to or below this
    double control_min = 0.8;   // control score must stay at or above this at the same alpha
};

struct TrustReport {
    std::string entity_id;
    NeuronId cell;
    bool trustworthy = false;
    double target_drop = 0.0;
    double control_drop = 0.0;
    bool collapsed = false;
    double evidence_alpha = 1.0;
};

TrustReport trust_filter(const AmnesiaCurve & curve, const TrustThresholds & thresholds,
                         bool collapsed);

struct SuccessThresholds {
    double rel_prob_min = 0.30;
    double margin = 0.05;
};

bool injection_success(double rel_prob, double rel_prob_no_injection, double rel_prob_wrong,
                       const SuccessThresholds & thresholds);

} // namespace entcell
