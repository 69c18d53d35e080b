#include "entcell/organism.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <set>

#include "entcell/rng.h"

namespace entcell {

namespace {

// Circuit calibration constants. Detector firing level is 1.0 in
// pre-activation units; everything else is expressed relative to that.
constexpr double kConstWeight = 0.25;     // query carrier present in every embedding
constexpr double kRelMarkWeight = 0.35;   // gather marker on context words
constexpr double kSinkWeight = 0.35;      // attention-sink marker on prompt-initial words
constexpr double kRelKeyWeight = 0.45;    // relation-specific key component
constexpr double kCellGateSlope = 80.0;
constexpr double kCellGateThresh = 0.7;
constexpr double kDistractorGateSlope = 40.0;
constexpr double kIdentityWrite = 2.0;    // identity-direction coefficient a firing cell writes
constexpr double kMarkerWrite = 1.0;      // gather-marker coefficient a firing cell writes
constexpr double kAttnScoreGain = 12.0;   // softmax logit for a unit marker
constexpr double kAttnValueGain = 2.0;
constexpr double kFactGateSlope = 60.0;
// The sink pins the softmax denominator: identity + relation + sink split a
// fact prompt three ways, so a lone marker at half weight lands at 0.75 of
// the both-present level and the threshold sits between.
constexpr double kFactGateThresh = 0.875;
constexpr double kAnswerWrite = 6.5;      // answer logit produced by a firing fact cell
constexpr double kDistractorBaseSigma = 0.08;

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

void normalize(std::vector<double> & v) {
    double n = norm(v);
    if (n < 1e-12) throw numeric_error("cannot normalize near-zero vector");
    for (auto & x : v) x /= n;
}

// Exactly orthonormal seeded directions.
std::vector<std::vector<double>> orthonormal_set(Rng rng, int count, int dim) {
    std::vector<std::vector<double>> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        for (int tries = 0; tries < 64; ++tries) {
            std::vector<double> v = rng.gaussian_vec(static_cast<size_t>(dim));
            for (const auto & prev : out) {
                double p = dot(v, prev);
                for (int a = 0; a < dim; ++a) v[static_cast<size_t>(a)] -= p * prev[static_cast<size_t>(a)];
            }
            if (norm(v) > 1e-3) {
                normalize(v);
                out.push_back(std::move(v));
                break;
            }
            if (tries == 63) throw numeric_error("failed to build orthonormal directions");
        }
    }
    return out;
}

// Unit vector orthogonal to every structural direction.
std::vector<double> complement_unit(Rng & rng, const std::vector<std::vector<double>> & structural,
                                    int dim) {
    for (int tries = 0; tries < 64; ++tries) {
        std::vector<double> v = rng.gaussian_vec(static_cast<size_t>(dim));
        for (const auto & s : structural) {
            double p = dot(v, s);
            for (int a = 0; a < dim; ++a) v[static_cast<size_t>(a)] -= p * s[static_cast<size_t>(a)];
        }
        if (norm(v) > 1e-3) {
            normalize(v);
            return v;
        }
    }
    throw numeric_error("failed to sample complement direction");
}

// Removes projections onto `constraints` one at a time, skipping any
// constraint that would collapse the vector. Keeps the result unit norm.
void orthogonalize_against(std::vector<double> & v,
                           const std::vector<std::span<const double>> & constraints) {
    for (const auto & c : constraints) {
        double cn = dot(c, c);
        if (cn < 1e-12) continue;
        double p = dot(v, c) / cn;
        std::vector<double> trial = v;
        for (size_t a = 0; a < v.size(); ++a) trial[a] -= p * c[a];
        if (norm(trial) >= 0.3) v = std::move(trial);
    }
    normalize(v);
}

struct Hasher {
    uint64_t h = 0xcbf29ce484222325ull;
    void bytes(const void * p, size_t n) { h = fnv1a64(p, n, h); }
    void u64(uint64_t v) { bytes(&v, sizeof(v)); }
    void i32(int v) { bytes(&v, sizeof(v)); }
    void f64(double v) { bytes(&v, sizeof(v)); }
    void str(const std::string & s) { u64(s.size()); bytes(s.data(), s.size()); }
    void ints(const std::vector<int> & v) { u64(v.size()); if (!v.empty()) bytes(v.data(), v.size() * sizeof(int)); }
    void floats(const std::vector<float> & v) { u64(v.size()); if (!v.empty()) bytes(v.data(), v.size() * sizeof(float)); }
    void cell(const NeuronId & c) { i32(c.layer); i32(c.neuron); }
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

void ModelConfig::validate() const {
    if (num_layers < 3) throw config_error("num_layers must be >= 3");
    if (mlp_width < 8) throw config_error("mlp_width must be >= 8");
    if (hidden_dim < 8) throw config_error("hidden_dim must be >= 8");
    if (vocab_size < 16) throw config_error("vocab_size must be >= 16");
    if (noise_scale < 0.0) throw config_error("noise_scale must be >= 0");
    if (!(alias_shared_weight > 0.0) || alias_shared_weight >= 0.9) {
        throw config_error("alias_shared_weight must lie in (0, 0.9)");
    }
    for (int l : attention_layers) {
        if (l < 0 || l >= num_layers) throw config_error("attention layer index out of range");
    }
}

void HookSet::validate(const ModelConfig & config, int seq_len) const {
    std::set<std::pair<int, int>> set_hidden_slots;
    auto check_cell = [&](const NeuronId & c) {
        if (c.layer < 0 || c.layer >= config.num_layers || c.neuron < 0 ||
            c.neuron >= config.mlp_width) {
            throw data_error("hook cell out of range");
        }
    };
    auto check_pos = [&](int pos, bool allow_all) {
        if (allow_all && pos == -1) return;
        if (pos < 0 || pos >= seq_len) throw data_error("hook position out of range");
    };
    for (const auto & hook : hooks) {
        if (const auto * r = std::get_if<Record>(&hook)) {
            if (r->layer < 0 || r->layer >= config.num_layers) throw data_error("record layer out of range");
        } else if (const auto * s = std::get_if<ScaleChannel>(&hook)) {
            check_cell(s->cell);
            check_pos(s->position, true);
        } else if (const auto * s = std::get_if<SetChannel>(&hook)) {
            check_cell(s->cell);
            check_pos(s->position, false);
        } else if (const auto * s = std::get_if<SetHidden>(&hook)) {
            if (s->layer < 0 || s->layer >= config.num_layers) throw data_error("hook layer out of range");
            check_pos(s->position, false);
            if (static_cast<int>(s->v.size()) != config.hidden_dim) throw data_error("hidden hook has wrong dimension");
            if (!set_hidden_slots.insert({s->layer, s->position}).second) {
                throw data_error("multiple set_hidden hooks on one (layer, position)");
            }
        } else if (const auto * s = std::get_if<AddHidden>(&hook)) {
            if (s->layer < 0 || s->layer >= config.num_layers) throw data_error("hook layer out of range");
            check_pos(s->position, false);
            if (static_cast<int>(s->v.size()) != config.hidden_dim) throw data_error("hidden hook has wrong dimension");
        }
    }
}

std::string Organism::fingerprint() const {
    Hasher hh;
    hh.i32(config.num_layers);
    hh.i32(config.hidden_dim);
    hh.i32(config.mlp_width);
    hh.i32(config.vocab_size);
    hh.u64(config.seed);
    hh.f64(config.noise_scale);
    hh.ints(config.attention_layers);
    hh.f64(config.alias_shared_weight);

    const auto & spec = ground_truth.spec;
    hh.u64(spec.entities.size());
    for (const auto & e : spec.entities) {
        hh.str(e.entity_id);
        hh.cell(e.cell);
        hh.u64(e.extra_cells.size());
        for (const auto & c : e.extra_cells) hh.cell(c);
        hh.i32(e.canonical_last_token);
        hh.ints(e.alias_last_tokens);
    }
    hh.u64(spec.facts.size());
    for (const auto & f : spec.facts) {
        hh.str(f.entity_id);
        hh.i32(f.relation_token);
        hh.i32(f.answer_token);
        hh.i32(f.fact_layer);
    }
    for (const auto & c : ground_truth.fact_cells) hh.cell(c);
    hh.u64(spec.distractors.size());
    for (const auto & dtr : spec.distractors) {
        hh.str(dtr.entity_id);
        hh.cell(dtr.cell);
        hh.f64(dtr.consistency);
    }
    hh.ints(spec.context_marked_tokens);
    hh.ints(spec.sink_tokens);
    hh.ints(spec.unknown_name_tokens);
    hh.ints(spec.wrapper_tokens);
    hh.u64(spec.calibration.size());
    for (const auto & [id, probe] : spec.calibration) {
        hh.str(id);
        hh.u64(probe.prompts.size());
        for (const auto & p : probe.prompts) hh.ints(p);
        hh.ints(probe.positions);
    }

    hh.floats(embeddings);
    hh.floats(unembedding);
    for (const auto & layer : layers) {
        hh.floats(layer.w_in);
        hh.floats(layer.gate_slope);
        hh.floats(layer.gate_thresh);
        hh.floats(layer.w_out);
        hh.i32(layer.has_attention ? 1 : 0);
        hh.floats(layer.wq);
        hh.floats(layer.wk);
        hh.floats(layer.wv);
    }
    for (const auto & [id, v] : ground_truth.identity_directions) {
        hh.str(id);
        hh.floats(v);
    }
    for (const auto & [id, v] : ground_truth.shared_components) {
        hh.str(id);
        hh.floats(v);
    }
    return hex64(hh.h);
}

ForwardResult forward(const Organism & organism, std::span<const int> tokens,
                      const HookSet & hooks) {
    const ModelConfig & cfg = organism.config;
    const int T = static_cast<int>(tokens.size());
    const int d = cfg.hidden_dim;
    const int M = cfg.mlp_width;
    const int V = cfg.vocab_size;
    const int L = cfg.num_layers;
    if (T == 0) throw data_error("empty prompt");
    for (int tok : tokens) {
        if (tok < 0 || tok >= V) throw data_error("token id out of vocabulary range");
    }
    hooks.validate(cfg, T);

    std::vector<bool> record(static_cast<size_t>(L), false);
    for (const auto & hook : hooks.hooks) {
        if (const auto * r = std::get_if<HookSet::Record>(&hook)) record[static_cast<size_t>(r->layer)] = true;
    }

    ForwardResult out;
    out.seq_len = T;
    out.vocab_size = V;
    out.trace.num_layers = L;
    out.trace.seq_len = T;
    out.trace.mlp_width = M;
    out.trace.hidden_dim = d;
    out.trace.channels.resize(static_cast<size_t>(L));
    out.trace.hidden.resize(static_cast<size_t>(L));

    std::vector<double> h(static_cast<size_t>(T) * static_cast<size_t>(d));
    for (int t = 0; t < T; ++t) {
        const float * e = organism.embeddings.data() +
                          static_cast<size_t>(tokens[static_cast<size_t>(t)]) * static_cast<size_t>(d);
        for (int i = 0; i < d; ++i) h[static_cast<size_t>(t) * d + i] = e[i];
    }

    std::vector<double> pre(static_cast<size_t>(T) * static_cast<size_t>(M));
    std::vector<double> q, k, v, attn_out;

    for (int l = 0; l < L; ++l) {
        const LayerWeights & lw = organism.layers[static_cast<size_t>(l)];

        // Hidden-state hooks act on the residual entering the block.
        for (const auto & hook : hooks.hooks) {
            if (const auto * s = std::get_if<HookSet::SetHidden>(&hook); s && s->layer == l) {
                for (int i = 0; i < d; ++i) h[static_cast<size_t>(s->position) * d + i] = s->v[static_cast<size_t>(i)];
            } else if (const auto * a = std::get_if<HookSet::AddHidden>(&hook); a && a->layer == l) {
                for (int i = 0; i < d; ++i) h[static_cast<size_t>(a->position) * d + i] += a->v[static_cast<size_t>(i)];
            }
        }

        if (record[static_cast<size_t>(l)]) out.trace.hidden[static_cast<size_t>(l)] = h;

        if (lw.has_attention) {
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
                    double * qt = q.data() + static_cast<size_t>(t) * d;
                    double * kt = k.data() + static_cast<size_t>(t) * d;
                    double * vt = v.data() + static_cast<size_t>(t) * d;
                    for (int a = 0; a < d; ++a) {
                        qt[a] += static_cast<double>(wq[static_cast<size_t>(a) * d]) * hv;
                        kt[a] += static_cast<double>(wk[static_cast<size_t>(a) * d]) * hv;
                        vt[a] += static_cast<double>(wv[static_cast<size_t>(a) * d]) * hv;
                    }
                }
            }
            attn_out.assign(static_cast<size_t>(T) * d, 0.0);
            std::vector<double> scores;
            for (int t = 0; t < T; ++t) {
                scores.assign(static_cast<size_t>(t) + 1, 0.0);
                double best = -1e300;
                for (int j = 0; j <= t; ++j) {
                    double s = dot(std::span<const double>(q.data() + static_cast<size_t>(t) * d, static_cast<size_t>(d)),
                                   std::span<const double>(k.data() + static_cast<size_t>(j) * d, static_cast<size_t>(d)));
                    scores[static_cast<size_t>(j)] = s;
                    best = std::max(best, s);
                }
                double z = 0.0;
                for (int j = 0; j <= t; ++j) {
                    scores[static_cast<size_t>(j)] = std::exp(scores[static_cast<size_t>(j)] - best);
                    z += scores[static_cast<size_t>(j)];
                }
                double * ot = attn_out.data() + static_cast<size_t>(t) * d;
                for (int j = 0; j <= t; ++j) {
                    double w = scores[static_cast<size_t>(j)] / z;
                    const double * vj = v.data() + static_cast<size_t>(j) * d;
                    for (int i = 0; i < d; ++i) ot[i] += w * vj[i];
                }
            }
            for (size_t i = 0; i < h.size(); ++i) h[i] += attn_out[i];
        }

        // Gated MLP. The traced value is the post-gate channel coefficient
        // entering the down-projection.
        std::fill(pre.begin(), pre.end(), 0.0);
        for (int t = 0; t < T; ++t) {
            const double * ht = h.data() + static_cast<size_t>(t) * d;
            double * pt = pre.data() + static_cast<size_t>(t) * M;
            for (int i = 0; i < d; ++i) {
                double hv = ht[i];
                if (hv == 0.0) continue;
                const float * wrow = lw.w_in.data() + static_cast<size_t>(i) * M;
                for (int j = 0; j < M; ++j) pt[j] += static_cast<double>(wrow[j]) * hv;
            }
            for (int j = 0; j < M; ++j) {
                double u = pt[j];
                double slope = lw.gate_slope[static_cast<size_t>(j)];
                double thresh = lw.gate_thresh[static_cast<size_t>(j)];
                pt[j] = u * sigmoid(slope * (u - thresh));
            }
        }

        for (const auto & hook : hooks.hooks) {
            if (const auto * s = std::get_if<HookSet::ScaleChannel>(&hook); s && s->cell.layer == l) {
                if (s->position == -1) {
                    for (int t = 0; t < T; ++t) pre[static_cast<size_t>(t) * M + s->cell.neuron] *= s->alpha;
                } else {
                    pre[static_cast<size_t>(s->position) * M + s->cell.neuron] *= s->alpha;
                }
            } else if (const auto * s = std::get_if<HookSet::SetChannel>(&hook); s && s->cell.layer == l) {
                pre[static_cast<size_t>(s->position) * M + s->cell.neuron] = s->value;
            }
        }

        if (record[static_cast<size_t>(l)]) out.trace.channels[static_cast<size_t>(l)] = pre;

        for (int t = 0; t < T; ++t) {
            const double * at = pre.data() + static_cast<size_t>(t) * M;
            double * ht = h.data() + static_cast<size_t>(t) * d;
            for (int j = 0; j < M; ++j) {
                double coef = at[j];
                if (coef == 0.0) continue;
                const float * wrow = lw.w_out.data() + static_cast<size_t>(j) * d;
                for (int i = 0; i < d; ++i) ht[i] += coef * static_cast<double>(wrow[i]);
            }
        }
    }

    out.logits.assign(static_cast<size_t>(T) * static_cast<size_t>(V), 0.0);
    for (int t = 0; t < T; ++t) {
        const double * ht = h.data() + static_cast<size_t>(t) * d;
        double * lt = out.logits.data() + static_cast<size_t>(t) * V;
        for (int tok = 0; tok < V; ++tok) {
            const float * urow = organism.unembedding.data() + static_cast<size_t>(tok) * d;
            double s = 0.0;
            for (int i = 0; i < d; ++i) s += static_cast<double>(urow[i]) * ht[i];
            lt[tok] = s;
        }
    }
    for (int tok = 0; tok < V; ++tok) {
        if (!std::isfinite(out.logits[static_cast<size_t>(T - 1) * V + tok])) {
            throw numeric_error("non-finite logit");
        }
    }
    return out;
}

namespace {

void validate_spec(const ModelConfig & cfg, const GroundTruthSpec & spec) {
    const int L = cfg.num_layers, M = cfg.mlp_width, V = cfg.vocab_size;
    auto check_token = [&](int tok, const char * what) {
        if (tok < 0 || tok >= V) throw config_error(std::string(what) + ": token id out of vocabulary range");
    };
    auto check_cell = [&](const NeuronId & c, const char * what) {
        if (c.layer < 0 || c.layer >= L || c.neuron < 0 || c.neuron >= M) {
            throw config_error(std::string(what) + ": cell out of range");
        }
    };

    std::set<std::pair<int, int>> used;
    auto claim = [&](const NeuronId & c, const char * what) {
        if (!used.insert({c.layer, c.neuron}).second) {
            throw config_error(std::string("duplicate cell assignment (") + what + ")");
        }
    };

    std::set<std::string> entity_ids;
    std::set<int> alias_tokens_seen;
    for (const auto & e : spec.entities) {
        if (!entity_ids.insert(e.entity_id).second) throw config_error("duplicate entity id in spec");
        check_cell(e.cell, "entity cell");
        claim(e.cell, "entity cell");
        for (const auto & x : e.extra_cells) {
            check_cell(x, "extra cell");
            if (x.layer != e.cell.layer) throw config_error("extra cells must share the primary cell layer");
            claim(x, "extra cell");
        }
        check_token(e.canonical_last_token, "canonical last token");
        for (int tok : e.alias_last_tokens) {
            check_token(tok, "alias last token");
            if (!alias_tokens_seen.insert(tok).second) {
                throw config_error("alias last token shared between entities");
            }
        }
    }

    int min_attn = L;
    for (int l : cfg.attention_layers) min_attn = std::min(min_attn, l);

    std::set<std::pair<std::string, int>> fact_keys;
    std::map<int, int> fact_count_per_layer;
    for (const auto & f : spec.facts) {
        if (!entity_ids.count(f.entity_id)) throw config_error("fact references unknown entity");
        check_token(f.relation_token, "relation token");
        check_token(f.answer_token, "answer token");
        if (f.fact_layer < 0 || f.fact_layer >= L) throw config_error("fact layer out of range");
        NeuronId cell{};
        for (const auto & e : spec.entities) {
            if (e.entity_id == f.entity_id) cell = e.cell;
        }
        if (f.fact_layer <= cell.layer) throw config_error("fact layer must exceed the entity cell layer");
        bool covered = false;
        for (int l : cfg.attention_layers) {
            if (l > cell.layer && l <= f.fact_layer) covered = true;
        }
        if (!covered) {
            throw config_error("no attention layer between entity cell and fact layer");
        }
        if (!fact_keys.insert({f.entity_id, f.relation_token}).second) {
            throw config_error("duplicate (entity, relation) fact");
        }
        fact_count_per_layer[f.fact_layer] += 1;
    }

    std::map<int, int> planted_per_layer;
    for (const auto & e : spec.entities) {
        planted_per_layer[e.cell.layer] += 1 + static_cast<int>(e.extra_cells.size());
    }
    for (const auto & dtr : spec.distractors) {
        if (!entity_ids.count(dtr.entity_id)) throw config_error("distractor references unknown entity");
        check_cell(dtr.cell, "distractor cell");
        claim(dtr.cell, "distractor cell");
        if (!(dtr.consistency >= 0.0 && dtr.consistency < 1.0)) {
            throw config_error("distractor consistency must lie in [0, 1)");
        }
        if (dtr.cell.layer <= min_attn) {
            throw config_error("distractor layer must sit above an attention layer");
        }
        if (!spec.calibration.count(dtr.entity_id)) {
            throw config_error("distractor entity lacks calibration prompts");
        }
        planted_per_layer[dtr.cell.layer] += 1;
    }
    for (const auto & [layer, n] : fact_count_per_layer) planted_per_layer[layer] += n;
    for (const auto & [layer, n] : planted_per_layer) {
        if (n > M) throw config_error("capacity exceeded: more plants than neurons in layer " +
                                      std::to_string(layer));
    }

    for (int tok : spec.context_marked_tokens) check_token(tok, "context token");
    for (int tok : spec.sink_tokens) check_token(tok, "sink token");
    for (int tok : spec.unknown_name_tokens) check_token(tok, "unknown-name token");
    for (int tok : spec.wrapper_tokens) check_token(tok, "wrapper token");
    for (const auto & [id, probe] : spec.calibration) {
        if (!entity_ids.count(id)) throw config_error("calibration references unknown entity");
        if (probe.prompts.size() != probe.positions.size()) {
            throw config_error("calibration prompts/positions size mismatch");
        }
        for (size_t i = 0; i < probe.prompts.size(); ++i) {
            for (int tok : probe.prompts[i]) check_token(tok, "calibration token");
            int pos = probe.positions[i];
            if (pos < 0 || pos >= static_cast<int>(probe.prompts[i].size())) {
                throw config_error("calibration position out of range");
            }
        }
    }
}

} // namespace

Organism build_organism(const ModelConfig & config, const GroundTruthSpec & spec_in) {
    config.validate();
    GroundTruthSpec spec = spec_in;
    // Canonical last token always trips the detector.
    for (auto & e : spec.entities) {
        if (std::find(e.alias_last_tokens.begin(), e.alias_last_tokens.end(),
                      e.canonical_last_token) == e.alias_last_tokens.end()) {
            e.alias_last_tokens.push_back(e.canonical_last_token);
        }
    }
    validate_spec(config, spec);

    const int L = config.num_layers;
    const int d = config.hidden_dim;
    const int M = config.mlp_width;
    const int V = config.vocab_size;
    const double w_share = config.alias_shared_weight;

    std::vector<int> relation_tokens;
    for (const auto & f : spec.facts) relation_tokens.push_back(f.relation_token);
    std::sort(relation_tokens.begin(), relation_tokens.end());
    relation_tokens.erase(std::unique(relation_tokens.begin(), relation_tokens.end()),
                          relation_tokens.end());

    const int n_struct = 5 + static_cast<int>(relation_tokens.size());
    if (n_struct > d / 2) {
        throw config_error("hidden_dim too small for structural directions (need >= " +
                           std::to_string(2 * n_struct) + ")");
    }

    Rng root(config.seed);
    auto structural = orthonormal_set(root.fork("structural"), n_struct, d);
    const auto & dir_const = structural[0];
    const auto & dir_marker = structural[1];
    const auto & dir_relmark = structural[2];
    const auto & dir_key = structural[3];
    const auto & dir_sink = structural[4];
    std::map<int, const std::vector<double> *> relation_dir;
    for (size_t r = 0; r < relation_tokens.size(); ++r) {
        relation_dir[relation_tokens[static_cast<size_t>(r)]] = &structural[5 + r];
    }

    std::set<int> context_marked(spec.context_marked_tokens.begin(),
                                 spec.context_marked_tokens.end());
    std::set<int> sink_marked(spec.sink_tokens.begin(), spec.sink_tokens.end());
    std::map<int, size_t> alias_owner;
    for (size_t e = 0; e < spec.entities.size(); ++e) {
        for (int tok : spec.entities[e].alias_last_tokens) alias_owner[tok] = e;
    }

    // Tokens the shared components must be exactly blind to: a detector tail
    // on a relation word or an unknown name would cascade through the gather
    // head, so those dot products are zeroed by construction. Priority order,
    // trimmed to leave the components room to stay diverse.
    std::vector<int> blind_tokens;
    {
        std::set<int> seen;
        auto push = [&](int tok) {
            if (!alias_owner.count(tok) && seen.insert(tok).second) blind_tokens.push_back(tok);
        };
        for (int tok : relation_tokens) push(tok);
        for (int tok : spec.unknown_name_tokens) push(tok);
        for (int tok : spec.wrapper_tokens) push(tok);
    }
    const int complement_dim = d - n_struct;
    const size_t constraint_cap =
        static_cast<size_t>(std::max(0, complement_dim - std::max(6, complement_dim / 4)));

    Organism org;
    org.config = config;

    // Token embeddings: seeded unit vectors with fixed structural components,
    // rejection-resampled so pairwise cosines stay at or below 0.5. Alias
    // last tokens are composed after the shared components exist.
    Rng emb_rng = root.fork("embeddings");
    org.embeddings.assign(static_cast<size_t>(V) * d, 0.0f);
    std::vector<std::vector<double>> rand_parts(static_cast<size_t>(V));
    std::vector<std::vector<double>> composed(static_cast<size_t>(V));
    std::vector<std::vector<double>> shared(spec.entities.size());

    auto compose_embedding = [&](int tok, const std::vector<double> * shared_dir) {
        double budget = kConstWeight * kConstWeight;
        if (context_marked.count(tok)) budget += kRelMarkWeight * kRelMarkWeight;
        if (sink_marked.count(tok)) budget += kSinkWeight * kSinkWeight;
        if (relation_dir.count(tok)) budget += kRelKeyWeight * kRelKeyWeight;
        if (shared_dir != nullptr) budget += w_share * w_share;
        double w_rand = std::sqrt(1.0 - budget);

        std::vector<double> best_rand, best_emb;
        double best_cos = 1e9;
        for (int tries = 0; tries < 64; ++tries) {
            std::vector<double> r = complement_unit(emb_rng, structural, d);
            if (shared_dir != nullptr) {
                orthogonalize_against(r, {std::span<const double>(*shared_dir)});
            }
            std::vector<double> e(static_cast<size_t>(d), 0.0);
            for (int i = 0; i < d; ++i) {
                e[static_cast<size_t>(i)] = kConstWeight * dir_const[static_cast<size_t>(i)] +
                                            w_rand * r[static_cast<size_t>(i)];
            }
            if (context_marked.count(tok)) {
                for (int i = 0; i < d; ++i) e[static_cast<size_t>(i)] += kRelMarkWeight * dir_relmark[static_cast<size_t>(i)];
            }
            if (sink_marked.count(tok)) {
                for (int i = 0; i < d; ++i) e[static_cast<size_t>(i)] += kSinkWeight * dir_sink[static_cast<size_t>(i)];
            }
            if (auto it = relation_dir.find(tok); it != relation_dir.end()) {
                for (int i = 0; i < d; ++i) e[static_cast<size_t>(i)] += kRelKeyWeight * (*it->second)[static_cast<size_t>(i)];
            }
            if (shared_dir != nullptr) {
                for (int i = 0; i < d; ++i) e[static_cast<size_t>(i)] += w_share * (*shared_dir)[static_cast<size_t>(i)];
            }
            double worst = 0.0;
            for (int prev = 0; prev < V; ++prev) {
                if (composed[static_cast<size_t>(prev)].empty() || prev == tok) continue;
                worst = std::max(worst, std::abs(dot(e, composed[static_cast<size_t>(prev)])));
                if (worst > 0.5) break;
            }
            if (worst < best_cos) {
                best_cos = worst;
                best_rand = std::move(r);
                best_emb = std::move(e);
            }
            if (best_cos <= 0.5) break;
        }
        rand_parts[static_cast<size_t>(tok)] = std::move(best_rand);
        for (int i = 0; i < d; ++i) {
            org.embeddings[static_cast<size_t>(tok) * d + i] =
                static_cast<float>(best_emb[static_cast<size_t>(i)]);
        }
        composed[static_cast<size_t>(tok)] = std::move(best_emb);
    };

    for (int tok = 0; tok < V; ++tok) {
        if (!alias_owner.count(tok)) compose_embedding(tok, nullptr);
    }

    Rng dir_rng = root.fork("entity-dirs");
    for (size_t e = 0; e < spec.entities.size(); ++e) {
        std::vector<double> s = complement_unit(dir_rng, structural, d);
        std::vector<std::span<const double>> constraints;
        for (int tok : blind_tokens) {
            if (constraints.size() >= constraint_cap) break;
            constraints.emplace_back(rand_parts[static_cast<size_t>(tok)]);
        }
        orthogonalize_against(s, constraints);
        shared[e] = std::move(s);
    }

    for (const auto & [tok, e] : alias_owner) compose_embedding(tok, &shared[e]);

    // Unembedding rows live in the structural complement so marker content
    // never leaks into logits.
    Rng unemb_rng = root.fork("unembedding");
    org.unembedding.assign(static_cast<size_t>(V) * d, 0.0f);
    for (int tok = 0; tok < V; ++tok) {
        std::vector<double> u = complement_unit(unemb_rng, structural, d);
        for (int i = 0; i < d; ++i) {
            org.unembedding[static_cast<size_t>(tok) * d + i] = static_cast<float>(u[static_cast<size_t>(i)]);
        }
    }

    // Identity directions, cleared of the content their reads and writes
    // coexist with; blindness to the entity's own answer unembeddings keeps
    // one firing fact from leaking into its siblings' detectors.
    std::vector<std::vector<double>> identity(spec.entities.size());
    Rng id_rng = root.fork("identity-dirs");
    for (size_t e = 0; e < spec.entities.size(); ++e) {
        std::vector<double> u = complement_unit(id_rng, structural, d);
        std::vector<std::vector<double>> own_answers;
        for (const auto & f : spec.facts) {
            if (f.entity_id != spec.entities[e].entity_id) continue;
            std::vector<double> row(static_cast<size_t>(d));
            const float * urow = org.unembedding.data() + static_cast<size_t>(f.answer_token) * d;
            for (int i = 0; i < d; ++i) row[static_cast<size_t>(i)] = urow[i];
            own_answers.push_back(std::move(row));
        }
        std::vector<std::span<const double>> constraints;
        constraints.emplace_back(shared[e]);
        for (const auto & row : own_answers) constraints.emplace_back(row);
        for (int tok : spec.entities[e].alias_last_tokens) {
            constraints.emplace_back(rand_parts[static_cast<size_t>(tok)]);
        }
        for (int tok : blind_tokens) constraints.emplace_back(rand_parts[static_cast<size_t>(tok)]);
        if (constraints.size() > constraint_cap) constraints.resize(constraint_cap);
        orthogonalize_against(u, constraints);
        identity[e] = std::move(u);
    }

    // Background weights: seeded noise at noise_scale.
    Rng noise_rng = root.fork("background");
    const double bg = config.noise_scale / std::sqrt(static_cast<double>(d));
    org.layers.resize(static_cast<size_t>(L));
    for (int l = 0; l < L; ++l) {
        LayerWeights & lw = org.layers[static_cast<size_t>(l)];
        lw.w_in.resize(static_cast<size_t>(d) * M);
        lw.w_out.resize(static_cast<size_t>(M) * d);
        lw.gate_slope.assign(static_cast<size_t>(M), static_cast<float>(kCellGateSlope));
        lw.gate_thresh.assign(static_cast<size_t>(M), static_cast<float>(kCellGateThresh));
        for (auto & w : lw.w_in) w = static_cast<float>(bg * noise_rng.normal());
        for (auto & w : lw.w_out) w = static_cast<float>(bg * noise_rng.normal());
        lw.has_attention = std::find(config.attention_layers.begin(), config.attention_layers.end(), l) !=
                           config.attention_layers.end();
        if (lw.has_attention) {
            lw.wq.assign(static_cast<size_t>(d) * d, 0.0f);
            lw.wk.assign(static_cast<size_t>(d) * d, 0.0f);
            lw.wv.assign(static_cast<size_t>(d) * d, 0.0f);
            for (int a = 0; a < d; ++a) {
                for (int i = 0; i < d; ++i) {
                    double qv = (1.0 / kConstWeight) * dir_key[static_cast<size_t>(a)] * dir_const[static_cast<size_t>(i)];
                    double kv = kAttnScoreGain * dir_key[static_cast<size_t>(a)] *
                                (dir_marker[static_cast<size_t>(i)] +
                                 (1.0 / kRelMarkWeight) * dir_relmark[static_cast<size_t>(i)] +
                                 (1.0 / kSinkWeight) * dir_sink[static_cast<size_t>(i)]);
                    lw.wq[static_cast<size_t>(a) * d + i] = static_cast<float>(qv);
                    lw.wk[static_cast<size_t>(a) * d + i] = static_cast<float>(kv);
                }
                lw.wv[static_cast<size_t>(a) * d + a] = static_cast<float>(kAttnValueGain);
            }
        }
    }

    auto set_in_column = [&](const NeuronId & cell, std::span<const double> col) {
        LayerWeights & lw = org.layers[static_cast<size_t>(cell.layer)];
        for (int i = 0; i < d; ++i) {
            lw.w_in[static_cast<size_t>(i) * M + cell.neuron] = static_cast<float>(col[static_cast<size_t>(i)]);
        }
    };
    auto set_out_row = [&](const NeuronId & cell, std::span<const double> row) {
        LayerWeights & lw = org.layers[static_cast<size_t>(cell.layer)];
        for (int i = 0; i < d; ++i) {
            lw.w_out[static_cast<size_t>(cell.neuron) * d + i] = static_cast<float>(row[static_cast<size_t>(i)]);
        }
    };
    auto set_gate = [&](const NeuronId & cell, double slope, double thresh) {
        LayerWeights & lw = org.layers[static_cast<size_t>(cell.layer)];
        lw.gate_slope[static_cast<size_t>(cell.neuron)] = static_cast<float>(slope);
        lw.gate_thresh[static_cast<size_t>(cell.neuron)] = static_cast<float>(thresh);
    };

    // Entity cells: the detector is the alias-shared component, the write is
    // the identity direction plus the gather marker. Multi-cell entities
    // split the write evenly.
    for (size_t e = 0; e < spec.entities.size(); ++e) {
        const PlantedEntity & ent = spec.entities[e];
        std::vector<NeuronId> cells = {ent.cell};
        cells.insert(cells.end(), ent.extra_cells.begin(), ent.extra_cells.end());
        std::vector<double> col(static_cast<size_t>(d));
        for (int i = 0; i < d; ++i) col[static_cast<size_t>(i)] = shared[e][static_cast<size_t>(i)] / w_share;
        std::vector<double> row(static_cast<size_t>(d));
        double split = 1.0 / static_cast<double>(cells.size());
        for (int i = 0; i < d; ++i) {
            row[static_cast<size_t>(i)] = split * (kIdentityWrite * identity[e][static_cast<size_t>(i)] +
                                                   kMarkerWrite * dir_marker[static_cast<size_t>(i)]);
        }
        for (const auto & cell : cells) {
            set_in_column(cell, col);
            set_out_row(cell, row);
            set_gate(cell, kCellGateSlope, kCellGateThresh);
        }
    }

    // Fact cells: keyed on identity + relation as gathered at the answer
    // position, writing the answer token's unembedding direction. Arrival
    // coefficients assume the three-way sink/relation/mention split.
    const double identity_arrival = kAttnValueGain * (1.0 / 3.0) * kIdentityWrite;
    const double relation_arrival = kAttnValueGain * (1.0 / 3.0) * kRelKeyWeight;
    std::set<std::pair<int, int>> used_cells;
    for (const auto & e : spec.entities) {
        used_cells.insert({e.cell.layer, e.cell.neuron});
        for (const auto & x : e.extra_cells) used_cells.insert({x.layer, x.neuron});
    }
    for (const auto & dtr : spec.distractors) used_cells.insert({dtr.cell.layer, dtr.cell.neuron});

    org.ground_truth.spec = spec;
    for (const auto & f : spec.facts) {
        int neuron = M - 1;
        while (neuron >= 0 && used_cells.count({f.fact_layer, neuron})) --neuron;
        if (neuron < 0) throw config_error("capacity exceeded: no free neuron for fact circuit");
        used_cells.insert({f.fact_layer, neuron});
        NeuronId cell{f.fact_layer, neuron};
        org.ground_truth.fact_cells.push_back(cell);

        size_t e = 0;
        for (size_t i = 0; i < spec.entities.size(); ++i) {
            if (spec.entities[i].entity_id == f.entity_id) e = i;
        }
        const auto & rk = *relation_dir.at(f.relation_token);
        std::vector<double> col(static_cast<size_t>(d));
        for (int i = 0; i < d; ++i) {
            col[static_cast<size_t>(i)] = (0.5 / identity_arrival) * identity[e][static_cast<size_t>(i)] +
                                          (0.5 / relation_arrival) * rk[static_cast<size_t>(i)];
        }
        std::vector<double> row(static_cast<size_t>(d));
        const float * urow = org.unembedding.data() + static_cast<size_t>(f.answer_token) * d;
        for (int i = 0; i < d; ++i) row[static_cast<size_t>(i)] = kAnswerWrite * static_cast<double>(urow[i]);
        set_in_column(cell, col);
        set_out_row(cell, row);
        set_gate(cell, kFactGateSlope, kFactGateThresh);
    }

    for (size_t e = 0; e < spec.entities.size(); ++e) {
        const auto & ent = spec.entities[e];
        org.ground_truth.planted_cells[ent.entity_id] = ent.cell;
        std::vector<float> idf(static_cast<size_t>(d)), shf(static_cast<size_t>(d));
        for (int i = 0; i < d; ++i) {
            idf[static_cast<size_t>(i)] = static_cast<float>(identity[e][static_cast<size_t>(i)]);
            shf[static_cast<size_t>(i)] = static_cast<float>(shared[e][static_cast<size_t>(i)]);
        }
        org.ground_truth.identity_directions[ent.entity_id] = std::move(idf);
        org.ground_truth.shared_components[ent.entity_id] = std::move(shf);
    }

    // Distractors fire on the entity at the planted mean but pick up
    // template-dependent context, giving them a cross-prompt standard
    // deviation of base_sigma / (1 - consistency). Calibrated empirically
    // against the probe prompts with the rest of the network in place.
    Rng dis_rng = root.fork("distractors");
    std::vector<size_t> dis_order(spec.distractors.size());
    for (size_t i = 0; i < dis_order.size(); ++i) dis_order[i] = i;
    std::sort(dis_order.begin(), dis_order.end(), [&](size_t a, size_t b) {
        const auto & ca = spec.distractors[a].cell;
        const auto & cb = spec.distractors[b].cell;
        return std::tie(ca.layer, ca.neuron) < std::tie(cb.layer, cb.neuron);
    });
    for (size_t oi : dis_order) {
        const DistractorSpec & dtr = spec.distractors[oi];
        size_t e = 0;
        for (size_t i = 0; i < spec.entities.size(); ++i) {
            if (spec.entities[i].entity_id == dtr.entity_id) e = i;
        }
        std::vector<double> ctx_dir = complement_unit(dis_rng, structural, d);
        orthogonalize_against(ctx_dir, {std::span<const double>(shared[e]),
                                        std::span<const double>(identity[e])});

        const CalibrationProbe & probe = spec.calibration.at(dtr.entity_id);
        std::vector<double> us, xs;
        for (size_t p = 0; p < probe.prompts.size(); ++p) {
            HookSet hooks;
            hooks.record(dtr.cell.layer);
            ForwardResult fr = forward(org, probe.prompts[p], hooks);
            auto hv = fr.trace.hidden_at(dtr.cell.layer, probe.positions[p]);
            us.push_back(dot(hv, shared[e]));
            xs.push_back(dot(hv, ctx_dir));
        }
        double mean_u = 0.0, mean_x = 0.0;
        for (size_t i = 0; i < us.size(); ++i) { mean_u += us[i]; mean_x += xs[i]; }
        mean_u /= static_cast<double>(us.size());
        mean_x /= static_cast<double>(xs.size());
        double var_x = 0.0;
        for (double x : xs) var_x += (x - mean_x) * (x - mean_x);
        var_x /= static_cast<double>(xs.size());
        double std_x = std::sqrt(var_x);
        if (std_x < 1e-9) {
            throw numeric_error("distractor calibration found no cross-prompt context variance");
        }
        if (std::abs(mean_u) < 1e-6) {
            throw numeric_error("distractor calibration found no shared-component signal");
        }

        double sigma_c = kDistractorBaseSigma / (1.0 - dtr.consistency);
        double rho = sigma_c / std_x;
        double beta = (1.0 - rho * mean_x) / mean_u;
        std::vector<double> col(static_cast<size_t>(d));
        for (int i = 0; i < d; ++i) {
            col[static_cast<size_t>(i)] = beta * shared[e][static_cast<size_t>(i)] +
                                          rho * ctx_dir[static_cast<size_t>(i)];
        }
        set_in_column(dtr.cell, col);
        double thresh = std::clamp(1.0 - 5.0 * sigma_c, 0.25, 0.8);
        set_gate(dtr.cell, kDistractorGateSlope, thresh);
        std::vector<double> row(static_cast<size_t>(d));
        for (int i = 0; i < d; ++i) row[static_cast<size_t>(i)] = bg * dis_rng.normal();
        set_out_row(dtr.cell, row);
    }

    return org;
}

} // namespace entcell
