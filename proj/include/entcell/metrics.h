#pragma once

#include <span>
#include <string>
#include <vector>

#include "entcell/vocab.h"

namespace entcell {

struct AnswerTargets {
    std::vector<int> ids;  // deduplicated first-token ids
};

// First token of each alias under leading-space tokenization, deduplicated.
AnswerTargets first_token_targets(const std::vector<std::string> & aliases,
                                  const Vocabulary & vocab);

std::vector<double> softmax(std::span<const double> logits);

// max over target ids of the token's probability. The distribution must be
// normalized within 1e-6.
double answer_score(std::span<const double> probs, const AnswerTargets & targets);

// True when any target id ranks among the k highest logits. Ties at the k-th
// logit break toward the lower token id.
bool pass_at_k(std::span<const double> logits, const AnswerTargets & targets, int k);

// Answer logprob rescaled between the unknown-entity anchor (0) and the
// entity-present anchor (1), clipped to [0, 1].
double amnesia_score(double lp_cond, double lp_unknown, double lp_present);

struct EvalOutcome {
    double p_full = 0.0;
    double p_no_injection = 0.0;
    double p_injected = 0.0;
    double rel_prob = 0.0;
    bool passed_at_k = false;
};

} // namespace entcell
