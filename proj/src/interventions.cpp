#include "entcell/interventions.h"

#include <algorithm>
#include <cmath>
#include <set>

namespace entcell {

void InjectionSpec::validate(const ModelConfig & config) const {
    if (layer < 0 || layer >= config.num_layers) throw data_error("injection layer out of range");
    if (cells.empty()) throw data_error("injection needs at least one cell");
    if (cells.size() != values.size()) throw data_error("injection cells/values size mismatch");
    std::set<int> seen;
    for (int j : cells) {
        if (j < 0 || j >= config.mlp_width) throw data_error("injection cell out of range");
        if (!seen.insert(j).second) throw data_error("duplicate injection cell");
    }
    if (static_cast<int>(mean_entity.size()) != config.hidden_dim) {
        throw data_error("mean-entity vector has wrong dimension");
    }
    for (double v : values) {
        if (!std::isfinite(v)) throw numeric_error("non-finite injection value");
    }
    for (double v : mean_entity) {
        if (!std::isfinite(v)) throw numeric_error("non-finite mean-entity component");
    }
    if (!std::isfinite(alpha)) throw numeric_error("non-finite injection alpha");
}

InjectionTask make_injection_task(const Vocabulary & vocab, const QARecord & qa,
                                  const EntityRecord & entity) {
    AliasMatch match = locate_alias(qa.question, entity.aliases);
    const auto & alias = entity.aliases[static_cast<size_t>(match.alias_index)];
    PlaceholderSwap swapped = placeholder_swap(vocab, qa.question, alias);

    InjectionTask task;
    task.entity_id = qa.entity_id;
    task.full_prompt = qa_wrap(vocab, qa.question);
    task.placeholder_prompt = qa_wrap(vocab, swapped.question);
    task.placeholder_pos = swapped.placeholder_pos + 1;  // wrapper prepends one token
    task.targets = first_token_targets(qa.answer_aliases, vocab);
    return task;
}

std::vector<double> mean_entity_vector(const Organism & organism,
                                       const std::vector<PromptBundle> & entity_prompts,
                                       int layer) {
    if (layer < 0 || layer >= organism.config.num_layers) {
        throw data_error("mean-entity layer out of range");
    }
    if (entity_prompts.size() < 2) {
        throw data_error("mean-entity vector needs at least two entities");
    }
    const int d = organism.config.hidden_dim;
    std::vector<double> mean(static_cast<size_t>(d), 0.0);
    for (const auto & bundle : entity_prompts) {
        if (bundle.prompts.empty()) throw data_error("entity bundle without prompts");
        std::vector<double> per_entity(static_cast<size_t>(d), 0.0);
        for (size_t p = 0; p < bundle.prompts.size(); ++p) {
            HookSet hooks;
            hooks.record(layer);
            ForwardResult fr = forward(organism, bundle.prompts[p], hooks);
            auto h = fr.trace.hidden_at(layer, bundle.entity_positions.at(p));
            for (int i = 0; i < d; ++i) per_entity[static_cast<size_t>(i)] += h[static_cast<size_t>(i)];
        }
        for (int i = 0; i < d; ++i) {
            mean[static_cast<size_t>(i)] +=
                per_entity[static_cast<size_t>(i)] / static_cast<double>(bundle.prompts.size());
        }
    }
    for (auto & v : mean) v /= static_cast<double>(entity_prompts.size());
    return mean;
}

double estimate_entity_value(const Organism & organism, const PromptBundle & entity_prompts,
                             NeuronId cell) {
    if (entity_prompts.prompts.empty()) throw data_error("no prompts for value estimation");
    double sum = 0.0;
    for (size_t p = 0; p < entity_prompts.prompts.size(); ++p) {
        HookSet hooks;
        hooks.record(cell.layer);
        ForwardResult fr = forward(organism, entity_prompts.prompts[p], hooks);
        sum += fr.trace.channel(cell.layer, entity_prompts.entity_positions.at(p), cell.neuron);
    }
    return sum / static_cast<double>(entity_prompts.prompts.size());
}

EvalOutcome controlled_injection(const Organism & organism, const InjectionTask & task,
                                 const InjectionSpec & spec, double epsilon, int pass_k) {
    spec.validate(organism.config);
    if (!(epsilon > 0.0)) throw config_error("epsilon must be positive");

    EvalOutcome out;
    {
        ForwardResult fr = forward(organism, task.full_prompt);
        out.p_full = answer_score(softmax(fr.last_logits()), task.targets);
    }
    {
        ForwardResult fr = forward(organism, task.placeholder_prompt);
        out.p_no_injection = answer_score(softmax(fr.last_logits()), task.targets);
    }
    {
        // Probe pass reads the channel values the mean-entity hidden state
        // induces; the blend then interpolates from those toward the
        // entity-specific values.
        HookSet probe;
        probe.set_hidden(spec.layer, task.placeholder_pos, spec.mean_entity);
        probe.record(spec.layer);
        ForwardResult pr = forward(organism, task.placeholder_prompt, probe);
        HookSet inject;
        inject.set_hidden(spec.layer, task.placeholder_pos, spec.mean_entity);
        for (size_t c = 0; c < spec.cells.size(); ++c) {
            double m_j = pr.trace.channel(spec.layer, task.placeholder_pos, spec.cells[c]);
            double blended = m_j + spec.alpha * (spec.values[c] - m_j);
            inject.set_channel(NeuronId{spec.layer, spec.cells[c]}, blended, task.placeholder_pos);
        }
        ForwardResult fr = forward(organism, task.placeholder_prompt, inject);
        out.p_injected = answer_score(softmax(fr.last_logits()), task.targets);
        out.passed_at_k = pass_at_k(fr.last_logits(), task.targets, pass_k);
    }
    out.rel_prob = out.p_injected / std::max(out.p_full, epsilon);
    return out;
}

AlphaSweepResult alpha_sweep(const Organism & organism, const InjectionTask & task,
                             const InjectionSpec & spec_template,
                             const std::vector<double> & grid, double epsilon, int pass_k) {
    if (grid.empty()) throw config_error("alpha grid must be nonempty");
    AlphaSweepResult result;
    bool first = true;
    for (double alpha : grid) {
        InjectionSpec spec = spec_template;
        spec.alpha = alpha;
        EvalOutcome outcome = controlled_injection(organism, task, spec, epsilon, pass_k);
        result.outcomes.push_back({alpha, outcome});
        if (first || outcome.rel_prob > result.best.rel_prob) {
            result.best = outcome;
            result.best_alpha = alpha;
            first = false;
        }
    }
    return result;
}

namespace {

double mean_log_answer(const Organism & organism, const std::vector<std::vector<int>> & prompts,
                       const std::vector<AnswerTargets> & targets, const HookSet & hooks) {
    double sum = 0.0;
    for (size_t i = 0; i < prompts.size(); ++i) {
        ForwardResult fr = forward(organism, prompts[i], hooks);
        sum += std::log(answer_score(softmax(fr.last_logits()), targets[i]));
    }
    return sum / static_cast<double>(prompts.size());
}

} // namespace

AmnesiaProbe make_amnesia_probe(const Organism & organism, const Vocabulary & vocab,
                                const EntityRecord & entity,
                                const std::vector<int> & unknown_tokens) {
    if (entity.qa.empty()) throw data_error("entity has no QA records: " + entity.entity_id);
    if (unknown_tokens.empty()) throw data_error("no unknown-name tokens configured");
    AmnesiaProbe probe;
    probe.entity_id = entity.entity_id;
    for (const auto & qa : entity.qa) {
        AliasMatch match = locate_alias(qa.question, entity.aliases);
        probe.prompts.push_back(qa_wrap(vocab, qa.question));
        probe.targets.push_back(first_token_targets(qa.answer_aliases, vocab));
        std::vector<std::vector<int>> unknowns;
        for (int name : unknown_tokens) {
            std::vector<int> swapped(qa.question.begin(), qa.question.begin() + match.start);
            swapped.push_back(name);
            swapped.insert(swapped.end(), qa.question.begin() + match.start + match.length,
                           qa.question.end());
            unknowns.push_back(qa_wrap(vocab, swapped));
        }
        probe.unknown_prompts.push_back(std::move(unknowns));
    }

    probe.lp_present = mean_log_answer(organism, probe.prompts, probe.targets, {});
    double lp_unknown = 0.0;
    long long n = 0;
    for (size_t q = 0; q < probe.unknown_prompts.size(); ++q) {
        for (const auto & prompt : probe.unknown_prompts[q]) {
            ForwardResult fr = forward(organism, prompt);
            lp_unknown += std::log(answer_score(softmax(fr.last_logits()), probe.targets[q]));
            ++n;
        }
    }
    probe.lp_unknown = lp_unknown / static_cast<double>(n);
    if (!(probe.lp_present > probe.lp_unknown)) {
        throw numeric_error("degenerate amnesia anchors for entity " + entity.entity_id);
    }
    return probe;
}

double amnesia_eval(const Organism & organism, const AmnesiaProbe & probe,
                    const AblationSpec & ablation) {
    HookSet hooks;
    hooks.scale_channel(ablation.cell, ablation.alpha, -1);
    double lp_cond = mean_log_answer(organism, probe.prompts, probe.targets, hooks);
    return amnesia_score(lp_cond, probe.lp_unknown, probe.lp_present);
}

std::vector<double> amnesia_alpha_grid(double from, double to, int steps) {
    if (steps < 2) throw config_error("alpha grid needs at least 2 steps");
    if (from == to) throw config_error("alpha grid must be strictly monotone");
    std::vector<double> grid(static_cast<size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        grid[static_cast<size_t>(i)] =
            from + (to - from) * static_cast<double>(i) / static_cast<double>(steps - 1);
    }
    return grid;
}

AmnesiaCurve amnesia_sweep(const Organism & organism, const AmnesiaProbe & target,
                           const AmnesiaProbe & control, NeuronId cell,
                           const std::vector<double> & grid) {
    if (target.entity_id == control.entity_id) {
        throw data_error("amnesia sweep needs distinct target and control entities");
    }
    if (grid.empty()) throw config_error("alpha grid must be nonempty");
    AmnesiaCurve curve;
    curve.cell = cell;
    curve.target_id = target.entity_id;
    curve.control_id = control.entity_id;
    for (double alpha : grid) {
        AblationSpec ab{cell, alpha};
        AmnesiaPoint point;
        point.alpha = alpha;
        point.target_score = amnesia_eval(organism, target, ab);
        point.control_score = amnesia_eval(organism, control, ab);
        curve.points.push_back(point);
    }
    return curve;
}

bool fluency_collapse(const Organism & organism, const AblationSpec & ablation,
                      const PromptBundle & baselines, double change_fraction) {
    if (baselines.prompts.empty()) throw data_error("collapse check needs baseline prompts");
    HookSet hooks;
    hooks.scale_channel(ablation.cell, ablation.alpha, -1);
    int changed = 0;
    for (const auto & prompt : baselines.prompts) {
        ForwardResult clean = forward(organism, prompt);
        ForwardResult ablated = forward(organism, prompt, hooks);
        auto argmax = [](std::span<const double> v) {
            size_t best = 0;
            for (size_t i = 1; i < v.size(); ++i) {
                if (v[i] > v[best]) best = i;
            }
            return best;
        };
        if (argmax(clean.last_logits()) != argmax(ablated.last_logits())) ++changed;
    }
    return static_cast<double>(changed) >
           change_fraction * static_cast<double>(baselines.prompts.size());
}

TrustReport trust_filter(const AmnesiaCurve & curve, const TrustThresholds & thresholds,
                         bool collapsed) {
    if (curve.points.empty()) throw data_error("incomplete amnesia curve");
    TrustReport report;
    report.entity_id = curve.target_id;
    report.cell = curve.cell;
    report.collapsed = collapsed;

    const AmnesiaPoint * evidence = nullptr;
    const AmnesiaPoint * deepest = &curve.points.front();
    for (const auto & p : curve.points) {
        if (p.target_score < deepest->target_score) deepest = &p;
        if (evidence == nullptr && p.target_score <= thresholds.target_max &&
            p.control_score >= thresholds.control_min) {
            evidence = &p;
        }
    }
    const AmnesiaPoint * basis = evidence ? evidence : deepest;
    report.evidence_alpha = basis->alpha;
    report.target_drop = 1.0 - deepest->target_score;
    report.control_drop = 1.0 - basis->control_score;
    report.trustworthy = evidence != nullptr && !collapsed;
    return report;
}

bool injection_success(double rel_prob, double rel_prob_no_injection, double rel_prob_wrong,
                       const SuccessThresholds & thresholds) {
    return rel_prob >= thresholds.rel_prob_min &&
           rel_prob - rel_prob_no_injection >= thresholds.margin &&
           rel_prob - rel_prob_wrong >= thresholds.margin;
}

} // namespace entcell
