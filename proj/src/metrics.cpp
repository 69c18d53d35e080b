#include "entcell/metrics.h"

#include <algorithm>
#include <cmath>
#include <set>

namespace entcell {

AnswerTargets first_token_targets(const std::vector<std::string> & aliases,
                                  const Vocabulary & vocab) {
    if (aliases.empty()) throw data_error("no answer aliases");
    AnswerTargets targets;
    std::set<int> seen;
    for (const auto & alias : aliases) {
        std::vector<int> toks = vocab.tokenize(" " + alias);
        if (toks.empty()) throw data_error("answer alias tokenizes to nothing: '" + alias + "'");
        if (seen.insert(toks.front()).second) targets.ids.push_back(toks.front());
    }
    return targets;
}

std::vector<double> softmax(std::span<const double> logits) {
    double best = -1e300;
    for (double v : logits) best = std::max(best, v);
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - best);
        z += p[i];
    }
    for (auto & v : p) v /= z;
    return p;
}

double answer_score(std::span<const double> probs, const AnswerTargets & targets) {
    if (targets.ids.empty()) throw data_error("empty answer targets");
    double sum = 0.0;
    for (double v : probs) sum += v;
    if (std::abs(sum - 1.0) > 1e-6) throw data_error("answer_score: distribution not normalized");
    double best = 0.0;
    for (int id : targets.ids) {
        if (id < 0 || static_cast<size_t>(id) >= probs.size()) throw data_error("target id out of range");
        best = std::max(best, probs[static_cast<size_t>(id)]);
    }
    return best;
}

bool pass_at_k(std::span<const double> logits, const AnswerTargets & targets, int k) {
    if (k < 1) throw data_error("pass_at_k: k must be >= 1");
    if (static_cast<size_t>(k) > logits.size()) throw data_error("pass_at_k: k exceeds vocabulary");
    if (targets.ids.empty()) throw data_error("empty answer targets");
    for (int id : targets.ids) {
        if (id < 0 || static_cast<size_t>(id) >= logits.size()) throw data_error("target id out of range");
        double lv = logits[static_cast<size_t>(id)];
        int rank = 0;  // tokens strictly ahead of this target
        for (size_t v = 0; v < logits.size(); ++v) {
            if (logits[v] > lv || (logits[v] == lv && static_cast<int>(v) < id)) ++rank;
        }
        if (rank < k) return true;
    }
    return false;
}

double amnesia_score(double lp_cond, double lp_unknown, double lp_present) {
    if (!(lp_present > lp_unknown)) {
        throw numeric_error("amnesia anchor degenerate: entity-present logprob must exceed unknown baseline");
    }
    double score = (lp_cond - lp_unknown) / (lp_present - lp_unknown);
    return std::clamp(score, 0.0, 1.0);
}

} // namespace entcell
