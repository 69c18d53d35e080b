#include "entcell/steering.h"

#include <algorithm>
#include <cmath>

#include "entcell/metrics.h"
#include "entcell/rng.h"

namespace entcell {

void SteeringConfig::validate(const ModelConfig & config) const {
    if (layer < 0 || layer >= config.num_layers) throw config_error("steering layer out of range");
    if (steps < 1) throw config_error("steering needs at least one step");
    if (!(lr >= 0.0)) throw config_error("learning rate must be nonnegative");
    if (lambda_attack < 0.0 || lambda_preserve < 0.0 || lambda_l2 < 0.0) {
        throw config_error("loss weights must be nonnegative");
    }
    if (weight_decay < 0.0) throw config_error("weight decay must be nonnegative");
}

void SteeringProblem::validate(const ModelConfig & config) const {
    if (attack.empty()) throw data_error("steering needs at least one attack prompt");
    if (target_token < 0 || target_token >= config.vocab_size) {
        throw data_error("steering target token out of range");
    }
    auto check = [&](const SteeringPrompt & p, bool needs_expected) {
        if (p.tokens.empty()) throw data_error("empty steering prompt");
        if (p.inject_pos < 0 || p.inject_pos >= static_cast<int>(p.tokens.size())) {
            throw data_error("unresolvable entity position in steering prompt");
        }
        if (needs_expected && (p.expected_token < 0 || p.expected_token >= config.vocab_size)) {
            throw data_error("preserve prompt lacks an expected token");
        }
    };
    for (const auto & p : attack) check(p, false);
    for (const auto & p : preserve) check(p, true);
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Forward pass mirroring forward() for a single prompt with delta added at
// (layer, pos), keeping every intermediate needed for the backward sweep.
struct Tape {
    int T = 0, d = 0, M = 0, L = 0;
    std::vector<std::vector<double>> block_in;   // [L] T*d, residual entering each block
    std::vector<std::vector<double>> post_attn;  // [L] T*d (empty when no attention)
    std::vector<std::vector<double>> q, k, v;    // [L] T*d
    std::vector<std::vector<double>> attn_w;     // [L] T*T lower-triangular weights
    std::vector<std::vector<double>> pre_gate;   // [L] T*M
    std::vector<std::vector<double>> act;        // [L] T*M
    std::vector<double> final_h;                 // T*d
    std::vector<double> probs;                   // V at last position
};

void taped_forward(const Organism & org, std::span<const int> tokens, int inject_layer,
                   int inject_pos, std::span<const double> delta, Tape & tape) {
    const auto & cfg = org.config;
    const int T = static_cast<int>(tokens.size());
    const int d = cfg.hidden_dim, M = cfg.mlp_width, V = cfg.vocab_size, L = cfg.num_layers;
    tape.T = T; tape.d = d; tape.M = M; tape.L = L;
    tape.block_in.assign(static_cast<size_t>(L), {});
    tape.post_attn.assign(static_cast<size_t>(L), {});
    tape.q.assign(static_cast<size_t>(L), {});
    tape.k.assign(static_cast<size_t>(L), {});
    tape.v.assign(static_cast<size_t>(L), {});
    tape.attn_w.assign(static_cast<size_t>(L), {});
    tape.pre_gate.assign(static_cast<size_t>(L), {});
    tape.act.assign(static_cast<size_t>(L), {});

    std::vector<double> h(static_cast<size_t>(T) * d);
    for (int t = 0; t < T; ++t) {
        const float * e = org.embeddings.data() + static_cast<size_t>(tokens[static_cast<size_t>(t)]) * d;
        for (int i = 0; i < d; ++i) h[static_cast<size_t>(t) * d + i] = e[i];
    }

    for (int l = 0; l < L; ++l) {
        const LayerWeights & lw = org.layers[static_cast<size_t>(l)];
        if (l == inject_layer) {
            for (int i = 0; i < d; ++i) h[static_cast<size_t>(inject_pos) * d + i] += delta[static_cast<size_t>(i)];
        }
        tape.block_in[static_cast<size_t>(l)] = h;

        if (lw.has_attention) {
            auto & q = tape.q[static_cast<size_t>(l)];
            auto & k = tape.k[static_cast<size_t>(l)];
            auto & v = tape.v[static_cast<size_t>(l)];
            q.assign(static_cast<size_t>(T) * d, 0.0);
            k.assign(static_cast<size_t>(T) * d, 0.0);
            v.assign(static_cast<size_t>(T) * d, 0.0);
            for (int t = 0; t < T; ++t) {
                const double * ht = h.data() + static_cast<size_t>(t) * d;
                for (int i = 0; i < d; ++i) {
                    double hv = ht[i];
                    if (hv == 0.0) continue;
                    const float * wq = lw.wq.data() + static_cast<size_t>(i);
                    const float * wk = lw.wk.data() + static_cast<size_t>(i);
                    const float * wv = lw.wv.data() + static_cast<size_t>(i);
                    for (int a = 0; a < d; ++a) {
                        q[static_cast<size_t>(t) * d + a] += static_cast<double>(wq[static_cast<size_t>(a) * d]) * hv;
                        k[static_cast<size_t>(t) * d + a] += static_cast<double>(wk[static_cast<size_t>(a) * d]) * hv;
                        v[static_cast<size_t>(t) * d + a] += static_cast<double>(wv[static_cast<size_t>(a) * d]) * hv;
                    }
                }
            }
            auto & w = tape.attn_w[static_cast<size_t>(l)];
            w.assign(static_cast<size_t>(T) * T, 0.0);
            std::vector<double> scores;
            for (int t = 0; t < T; ++t) {
                scores.assign(static_cast<size_t>(t) + 1, 0.0);
                double best = -1e300;
                for (int j = 0; j <= t; ++j) {
                    double s = 0.0;
                    for (int a = 0; a < d; ++a) {
                        s += q[static_cast<size_t>(t) * d + a] * k[static_cast<size_t>(j) * d + a];
                    }
                    scores[static_cast<size_t>(j)] = s;
                    best = std::max(best, s);
                }
                double z = 0.0;
                for (int j = 0; j <= t; ++j) {
                    scores[static_cast<size_t>(j)] = std::exp(scores[static_cast<size_t>(j)] - best);
                    z += scores[static_cast<size_t>(j)];
                }
                for (int j = 0; j <= t; ++j) {
                    w[static_cast<size_t>(t) * T + j] = scores[static_cast<size_t>(j)] / z;
                }
            }
            for (int t = 0; t < T; ++t) {
                double * ht = h.data() + static_cast<size_t>(t) * d;
                for (int j = 0; j <= t; ++j) {
                    double wj = w[static_cast<size_t>(t) * T + j];
                    const double * vj = v.data() + static_cast<size_t>(j) * d;
                    for (int i = 0; i < d; ++i) ht[i] += wj * vj[i];
                }
            }
            tape.post_attn[static_cast<size_t>(l)] = h;
        }

        auto & pre = tape.pre_gate[static_cast<size_t>(l)];
        auto & act = tape.act[static_cast<size_t>(l)];
        pre.assign(static_cast<size_t>(T) * M, 0.0);
        act.assign(static_cast<size_t>(T) * M, 0.0);
        for (int t = 0; t < T; ++t) {
            const double * ht = h.data() + static_cast<size_t>(t) * d;
            double * pt = pre.data() + static_cast<size_t>(t) * M;
            for (int i = 0; i < d; ++i) {
                double hv = ht[i];
                if (hv == 0.0) continue;
                const float * wrow = lw.w_in.data() + static_cast<size_t>(i) * M;
                for (int j = 0; j < M; ++j) pt[j] += static_cast<double>(wrow[j]) * hv;
            }
            double * at = act.data() + static_cast<size_t>(t) * M;
            for (int j = 0; j < M; ++j) {
                double u = pt[j];
                double slope = lw.gate_slope[static_cast<size_t>(j)];
                double thresh = lw.gate_thresh[static_cast<size_t>(j)];
                at[j] = u * sigmoid(slope * (u - thresh));
            }
            double * hmut = h.data() + static_cast<size_t>(t) * d;
            for (int j = 0; j < M; ++j) {
                double coef = at[j];
                if (coef == 0.0) continue;
                const float * wrow = lw.w_out.data() + static_cast<size_t>(j) * d;
                for (int i = 0; i < d; ++i) hmut[i] += coef * static_cast<double>(wrow[i]);
            }
        }
    }
    tape.final_h = h;

    std::vector<double> logits(static_cast<size_t>(V));
    const double * hlast = h.data() + static_cast<size_t>(T - 1) * d;
    for (int tok = 0; tok < V; ++tok) {
        const float * urow = org.unembedding.data() + static_cast<size_t>(tok) * d;
        double s = 0.0;
        for (int i = 0; i < d; ++i) s += static_cast<double>(urow[i]) * hlast[i];
        logits[static_cast<size_t>(tok)] = s;
    }
    tape.probs = softmax(logits);
}

// Accumulates d(-log p(y))/d(delta) for one prompt into grad.
void backward_into(const Organism & org, const Tape & tape, int y, int inject_layer,
                   int inject_pos, double weight, std::vector<double> & grad) {
    const auto & cfg = org.config;
    const int T = tape.T, d = tape.d, M = tape.M, V = cfg.vocab_size;

    std::vector<double> dh(static_cast<size_t>(T) * d, 0.0);
    {
        double * dlast = dh.data() + static_cast<size_t>(T - 1) * d;
        for (int tok = 0; tok < V; ++tok) {
            double g = tape.probs[static_cast<size_t>(tok)] - (tok == y ? 1.0 : 0.0);
            if (g == 0.0) continue;
            const float * urow = org.unembedding.data() + static_cast<size_t>(tok) * d;
            for (int i = 0; i < d; ++i) dlast[i] += g * static_cast<double>(urow[i]);
        }
    }

    std::vector<double> dpre(static_cast<size_t>(T) * M);
    std::vector<double> dq, dk, dv, dw;
    for (int l = tape.L - 1; l >= inject_layer; --l) {
        const LayerWeights & lw = org.layers[static_cast<size_t>(l)];

        // MLP backward; the residual path passes dh through unchanged.
        const auto & pre = tape.pre_gate[static_cast<size_t>(l)];
        std::fill(dpre.begin(), dpre.end(), 0.0);
        for (int t = 0; t < T; ++t) {
            const double * dht = dh.data() + static_cast<size_t>(t) * d;
            double * dpt = dpre.data() + static_cast<size_t>(t) * M;
            for (int j = 0; j < M; ++j) {
                const float * wrow = lw.w_out.data() + static_cast<size_t>(j) * d;
                double da = 0.0;
                for (int i = 0; i < d; ++i) da += dht[i] * static_cast<double>(wrow[i]);
                double u = pre[static_cast<size_t>(t) * M + j];
                double slope = lw.gate_slope[static_cast<size_t>(j)];
                double thresh = lw.gate_thresh[static_cast<size_t>(j)];
                double s = sigmoid(slope * (u - thresh));
                dpt[j] = da * (s + u * s * (1.0 - s) * slope);
            }
        }
        for (int t = 0; t < T; ++t) {
            double * dht = dh.data() + static_cast<size_t>(t) * d;
            const double * dpt = dpre.data() + static_cast<size_t>(t) * M;
            for (int i = 0; i < d; ++i) {
                const float * wrow = lw.w_in.data() + static_cast<size_t>(i) * M;
                double acc = 0.0;
                for (int j = 0; j < M; ++j) acc += dpt[j] * static_cast<double>(wrow[j]);
                dht[i] += acc;
            }
        }

        if (lw.has_attention) {
            const auto & q = tape.q[static_cast<size_t>(l)];
            const auto & k = tape.k[static_cast<size_t>(l)];
            const auto & v = tape.v[static_cast<size_t>(l)];
            const auto & w = tape.attn_w[static_cast<size_t>(l)];
            dq.assign(static_cast<size_t>(T) * d, 0.0);
            dk.assign(static_cast<size_t>(T) * d, 0.0);
            dv.assign(static_cast<size_t>(T) * d, 0.0);
            for (int t = 0; t < T; ++t) {
                const double * dout = dh.data() + static_cast<size_t>(t) * d;
                dw.assign(static_cast<size_t>(t) + 1, 0.0);
                for (int j = 0; j <= t; ++j) {
                    double wj = w[static_cast<size_t>(t) * T + j];
                    const double * vj = v.data() + static_cast<size_t>(j) * d;
                    double dwj = 0.0;
                    for (int i = 0; i < d; ++i) {
                        dv[static_cast<size_t>(j) * d + i] += wj * dout[i];
                        dwj += dout[i] * vj[i];
                    }
                    dw[static_cast<size_t>(j)] = dwj;
                }
                double mix = 0.0;
                for (int j = 0; j <= t; ++j) mix += w[static_cast<size_t>(t) * T + j] * dw[static_cast<size_t>(j)];
                for (int j = 0; j <= t; ++j) {
                    double ds = w[static_cast<size_t>(t) * T + j] * (dw[static_cast<size_t>(j)] - mix);
                    if (ds == 0.0) continue;
                    const double * kj = k.data() + static_cast<size_t>(j) * d;
                    const double * qt = q.data() + static_cast<size_t>(t) * d;
                    for (int a = 0; a < d; ++a) {
                        dq[static_cast<size_t>(t) * d + a] += ds * kj[a];
                        dk[static_cast<size_t>(j) * d + a] += ds * qt[a];
                    }
                }
            }
            for (int t = 0; t < T; ++t) {
                double * dht = dh.data() + static_cast<size_t>(t) * d;
                const double * dqt = dq.data() + static_cast<size_t>(t) * d;
                const double * dkt = dk.data() + static_cast<size_t>(t) * d;
                const double * dvt = dv.data() + static_cast<size_t>(t) * d;
                for (int i = 0; i < d; ++i) {
                    double acc = 0.0;
                    for (int a = 0; a < d; ++a) {
                        acc += dqt[a] * static_cast<double>(lw.wq[static_cast<size_t>(a) * d + i]);
                        acc += dkt[a] * static_cast<double>(lw.wk[static_cast<size_t>(a) * d + i]);
                        acc += dvt[a] * static_cast<double>(lw.wv[static_cast<size_t>(a) * d + i]);
                    }
                    dht[i] += acc;
                }
            }
        }
    }

    const double * dsrc = dh.data() + static_cast<size_t>(inject_pos) * d;
    for (int i = 0; i < d; ++i) grad[static_cast<size_t>(i)] += weight * dsrc[i];
}

double prompt_nll(const Organism & org, const SteeringPrompt & prompt, int target, int layer,
                  std::span<const double> delta) {
    HookSet hooks;
    hooks.add_hidden(layer, prompt.inject_pos,
                     std::vector<double>(delta.begin(), delta.end()));
    ForwardResult fr = forward(org, prompt.tokens, hooks);
    std::vector<double> probs = softmax(fr.last_logits());
    return -std::log(probs[static_cast<size_t>(target)]);
}

} // namespace

LossParts steering_loss(const Organism & organism, const SteeringProblem & problem,
                        std::span<const double> delta, const SteeringConfig & config) {
    config.validate(organism.config);
    problem.validate(organism.config);
    if (static_cast<int>(delta.size()) != organism.config.hidden_dim) {
        throw data_error("delta has wrong dimension");
    }
    LossParts parts;
    for (const auto & p : problem.attack) {
        parts.attack += prompt_nll(organism, p, problem.target_token, config.layer, delta);
    }
    parts.attack /= static_cast<double>(problem.attack.size());
    if (!problem.preserve.empty()) {
        for (const auto & p : problem.preserve) {
            parts.preserve += prompt_nll(organism, p, p.expected_token, config.layer, delta);
        }
        parts.preserve /= static_cast<double>(problem.preserve.size());
    }
    double sq = 0.0;
    for (double x : delta) sq += x * x;
    parts.l2 = std::sqrt(sq);
    parts.total = config.lambda_attack * parts.attack + config.lambda_preserve * parts.preserve +
                  config.lambda_l2 * parts.l2;
    return parts;
}

std::vector<double> steering_gradient(const Organism & organism, const SteeringProblem & problem,
                                      std::span<const double> delta,
                                      const SteeringConfig & config) {
    config.validate(organism.config);
    problem.validate(organism.config);
    const int d = organism.config.hidden_dim;
    if (static_cast<int>(delta.size()) != d) throw data_error("delta has wrong dimension");

    std::vector<double> grad(static_cast<size_t>(d), 0.0);
    Tape tape;
    double wa = config.lambda_attack / static_cast<double>(problem.attack.size());
    for (const auto & p : problem.attack) {
        if (wa == 0.0) break;
        taped_forward(organism, p.tokens, config.layer, p.inject_pos, delta, tape);
        backward_into(organism, tape, problem.target_token, config.layer, p.inject_pos, wa, grad);
    }
    if (!problem.preserve.empty() && config.lambda_preserve > 0.0) {
        double wp = config.lambda_preserve / static_cast<double>(problem.preserve.size());
        for (const auto & p : problem.preserve) {
            taped_forward(organism, p.tokens, config.layer, p.inject_pos, delta, tape);
            backward_into(organism, tape, p.expected_token, config.layer, p.inject_pos, wp, grad);
        }
    }
    double nrm = 0.0;
    for (double x : delta) nrm += x * x;
    nrm = std::sqrt(nrm);
    if (config.lambda_l2 > 0.0 && nrm > 0.0) {
        for (int i = 0; i < d; ++i) {
            grad[static_cast<size_t>(i)] += config.lambda_l2 * delta[static_cast<size_t>(i)] / nrm;
        }
    }
    for (double g : grad) {
        if (!std::isfinite(g)) throw numeric_error("non-finite steering gradient");
    }
    return grad;
}

SteeringResult optimize_delta(const Organism & organism, const SteeringProblem & problem,
                              const SteeringConfig & config) {
    config.validate(organism.config);
    problem.validate(organism.config);
    const int d = organism.config.hidden_dim;

    SteeringResult result;
    Rng rng = Rng(config.seed).fork("steering-init");
    result.delta.resize(static_cast<size_t>(d));
    for (auto & x : result.delta) x = rng.uniform();

    auto eval_probs = [&](std::span<const double> delta, std::vector<double> & attack_out,
                          std::vector<double> & preserve_out) {
        attack_out.clear();
        preserve_out.clear();
        for (const auto & p : problem.attack) {
            HookSet hooks;
            hooks.add_hidden(config.layer, p.inject_pos,
                             std::vector<double>(delta.begin(), delta.end()));
            ForwardResult fr = forward(organism, p.tokens, hooks);
            attack_out.push_back(softmax(fr.last_logits())[static_cast<size_t>(problem.target_token)]);
        }
        for (const auto & p : problem.preserve) {
            HookSet hooks;
            hooks.add_hidden(config.layer, p.inject_pos,
                             std::vector<double>(delta.begin(), delta.end()));
            ForwardResult fr = forward(organism, p.tokens, hooks);
            preserve_out.push_back(softmax(fr.last_logits())[static_cast<size_t>(p.expected_token)]);
        }
    };

    std::vector<double> zero(static_cast<size_t>(d), 0.0);
    eval_probs(zero, result.attack_before, result.preserve_before);

    std::vector<double> m(static_cast<size_t>(d), 0.0), v(static_cast<size_t>(d), 0.0);
    for (int step = 1; step <= config.steps; ++step) {
        LossParts parts = steering_loss(organism, problem, result.delta, config);
        if (!std::isfinite(parts.total)) {
            result.diverged = true;
            break;
        }
        result.trajectory.push_back(parts);
        std::vector<double> g = steering_gradient(organism, problem, result.delta, config);
        double bc1 = 1.0 - std::pow(config.beta1, step);
        double bc2 = 1.0 - std::pow(config.beta2, step);
        for (int i = 0; i < d; ++i) {
            size_t ii = static_cast<size_t>(i);
            m[ii] = config.beta1 * m[ii] + (1.0 - config.beta1) * g[ii];
            v[ii] = config.beta2 * v[ii] + (1.0 - config.beta2) * g[ii] * g[ii];
            double mhat = m[ii] / bc1;
            double vhat = v[ii] / bc2;
            result.delta[ii] -= config.lr * (mhat / (std::sqrt(vhat) + 1e-8) +
                                             config.weight_decay * result.delta[ii]);
        }
    }
    eval_probs(result.delta, result.attack_after, result.preserve_after);
    return result;
}

} // namespace entcell
