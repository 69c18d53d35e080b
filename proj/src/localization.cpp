#include "entcell/localization.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace entcell {

namespace {
constexpr char kDumpMagic[16] = {'E', 'N', 'T', 'C', 'E', 'L', 'L', '.',
                                 'A', 'C', 'T', 'D', 'U', 'M', 'P', '1'};
}

void RunningStats::add_sample(std::span<const double> flat) {
    if (flat.size() != mean.size()) throw data_error("stats sample has wrong shape");
    for (double v : flat) {
        if (!std::isfinite(v)) throw numeric_error("non-finite activation in baseline sample");
    }
    count += 1;
    for (size_t i = 0; i < mean.size(); ++i) {
        double delta = flat[i] - mean[i];
        mean[i] += delta / static_cast<double>(count);
        m2[i] += delta * (flat[i] - mean[i]);
    }
}

void RunningStats::merge(const RunningStats & other) {
    if (other.count == 0) return;
    if (count == 0) {
        *this = other;
        return;
    }
    if (other.mean.size() != mean.size()) throw data_error("stats merge shape mismatch");
    long long n = count + other.count;
    double na = static_cast<double>(count), nb = static_cast<double>(other.count);
    for (size_t i = 0; i < mean.size(); ++i) {
        double delta = other.mean[i] - mean[i];
        m2[i] += other.m2[i] + delta * delta * na * nb / static_cast<double>(n);
        mean[i] = (na * mean[i] + nb * other.mean[i]) / static_cast<double>(n);
    }
    count = n;
}

BaselineStats RunningStats::finalize(double epsilon) const {
    if (count < 2) throw data_error("baseline statistics need at least 2 prompts");
    if (!(epsilon > 0.0)) throw config_error("epsilon must be positive");
    BaselineStats out;
    out.num_layers = num_layers;
    out.mlp_width = mlp_width;
    out.sample_count = count;
    out.epsilon = epsilon;
    out.mu = mean;
    out.sigma.resize(m2.size());
    for (size_t i = 0; i < m2.size(); ++i) {
        out.sigma[i] = std::sqrt(std::max(0.0, m2[i] / static_cast<double>(count)));
    }
    return out;
}

double zscore(double a, double mu, double sigma, double epsilon) {
    if (!(epsilon > 0.0)) throw config_error("epsilon must be positive");
    return (a - mu) / (sigma + epsilon);
}

StabilityTable stability_scores(std::span<const double> z, int prompt_count,
                                int num_layers, int mlp_width, double epsilon) {
    if (prompt_count < 1) throw data_error("stability needs at least one prompt");
    size_t per_prompt = static_cast<size_t>(num_layers) * static_cast<size_t>(mlp_width);
    if (z.size() != per_prompt * static_cast<size_t>(prompt_count)) {
        throw data_error("z tensor shape mismatch");
    }
    for (double v : z) {
        if (!std::isfinite(v)) throw numeric_error("non-finite z value");
    }
    StabilityTable table;
    table.num_layers = num_layers;
    table.mlp_width = mlp_width;
    table.prompt_count = prompt_count;
    table.score.resize(per_prompt);
    table.mean_z.resize(per_prompt);
    table.std_z.resize(per_prompt);
    for (size_t c = 0; c < per_prompt; ++c) {
        double mean = 0.0;
        for (int p = 0; p < prompt_count; ++p) mean += z[static_cast<size_t>(p) * per_prompt + c];
        mean /= static_cast<double>(prompt_count);
        double var = 0.0;
        for (int p = 0; p < prompt_count; ++p) {
            double dlt = z[static_cast<size_t>(p) * per_prompt + c] - mean;
            var += dlt * dlt;
        }
        var /= static_cast<double>(prompt_count);
        double sd = std::sqrt(var);
        table.mean_z[c] = mean;
        table.std_z[c] = sd;
        table.score[c] = (mean * mean) / (sd + epsilon);
    }
    return table;
}

std::vector<RankedCell> rank_cells(const StabilityTable & table) {
    std::vector<RankedCell> cells;
    cells.reserve(table.score.size());
    for (int l = 0; l < table.num_layers; ++l) {
        for (int j = 0; j < table.mlp_width; ++j) {
            cells.push_back({NeuronId{l, j}, table.score_at(NeuronId{l, j})});
        }
    }
    std::sort(cells.begin(), cells.end(), [](const RankedCell & a, const RankedCell & b) {
        if (a.score != b.score) return a.score > b.score;
        return std::tie(a.cell.layer, a.cell.neuron) < std::tie(b.cell.layer, b.cell.neuron);
    });
    return cells;
}

BaselineStats collect_baseline_stats(const Organism & organism, const PromptBundle & baselines,
                                     double epsilon) {
    const int L = organism.config.num_layers;
    const int M = organism.config.mlp_width;
    if (baselines.prompts.size() < 2) throw data_error("baseline statistics need at least 2 prompts");
    RunningStats stats(L, M);
    std::vector<double> row(static_cast<size_t>(L) * M);
    for (const auto & prompt : baselines.prompts) {
        HookSet hooks;
        hooks.record_all(L);
        ForwardResult fr = forward(organism, prompt, hooks);
        int last = fr.seq_len - 1;
        for (int l = 0; l < L; ++l) {
            for (int j = 0; j < M; ++j) {
                row[static_cast<size_t>(l) * M + j] = fr.trace.channel(l, last, j);
            }
        }
        stats.add_sample(row);
    }
    return stats.finalize(epsilon);
}

LocalizationResult localize_entity(const Organism & organism, const BaselineStats & stats,
                                   const PromptBundle & prompts) {
    const int L = organism.config.num_layers;
    const int M = organism.config.mlp_width;
    if (stats.num_layers != L || stats.mlp_width != M) {
        throw data_error("baseline statistics shape mismatch");
    }
    if (prompts.prompts.empty()) throw data_error("no localization prompts");
    if (prompts.entity_positions.size() != prompts.prompts.size()) {
        throw data_error("prompt bundle lacks entity positions");
    }
    const int K = static_cast<int>(prompts.prompts.size());
    size_t per_prompt = static_cast<size_t>(L) * M;
    std::vector<double> z(static_cast<size_t>(K) * per_prompt);
    for (int p = 0; p < K; ++p) {
        HookSet hooks;
        hooks.record_all(L);
        ForwardResult fr = forward(organism, prompts.prompts[static_cast<size_t>(p)], hooks);
        int pos = prompts.entity_positions[static_cast<size_t>(p)];
        if (pos < 0 || pos >= fr.seq_len) throw data_error("entity position out of range");
        for (int l = 0; l < L; ++l) {
            for (int j = 0; j < M; ++j) {
                size_t c = static_cast<size_t>(l) * M + j;
                z[static_cast<size_t>(p) * per_prompt + c] =
                    zscore(fr.trace.channel(l, pos, j), stats.mu[c], stats.sigma[c], stats.epsilon);
            }
        }
    }
    LocalizationResult out;
    out.table = stability_scores(z, K, L, M, stats.epsilon);
    out.ranking = rank_cells(out.table);
    return out;
}

std::map<int, int> layer_histogram(const CellMap & cells) {
    if (cells.entity_order.empty()) throw data_error("empty cell map");
    std::map<int, int> hist;
    for (const auto & id : cells.entity_order) {
        hist[cells.top(id).cell.layer] += 1;
    }
    return hist;
}

ActivationDump collect_activation_dump(const Organism & organism, const PromptBundle & prompts,
                                       ActivationDump::Position policy) {
    const int L = organism.config.num_layers;
    const int M = organism.config.mlp_width;
    ActivationDump dump;
    dump.num_layers = L;
    dump.mlp_width = M;
    dump.position_policy = policy;
    dump.prompt_count = static_cast<int>(prompts.prompts.size());
    dump.values.reserve(static_cast<size_t>(dump.prompt_count) * L * M);
    for (size_t p = 0; p < prompts.prompts.size(); ++p) {
        HookSet hooks;
        hooks.record_all(L);
        ForwardResult fr = forward(organism, prompts.prompts[p], hooks);
        int pos = policy == ActivationDump::Position::final_token
                      ? fr.seq_len - 1
                      : prompts.entity_positions.at(p);
        for (int l = 0; l < L; ++l) {
            for (int j = 0; j < M; ++j) {
                dump.values.push_back(static_cast<float>(fr.trace.channel(l, pos, j)));
            }
        }
    }
    return dump;
}

void save_activation_dump(const std::string & path, const ActivationDump & dump) {
    size_t expect = static_cast<size_t>(dump.prompt_count) * dump.num_layers * dump.mlp_width;
    if (dump.values.size() != expect) throw data_error("dump payload does not match header");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write activation dump: " + path);
    out.write(kDumpMagic, sizeof(kDumpMagic));
    uint32_t header[3] = {static_cast<uint32_t>(dump.prompt_count),
                          static_cast<uint32_t>(dump.num_layers),
                          static_cast<uint32_t>(dump.mlp_width)};
    out.write(reinterpret_cast<const char *>(header), sizeof(header));
    uint8_t policy = static_cast<uint8_t>(dump.position_policy);
    out.write(reinterpret_cast<const char *>(&policy), 1);
    out.write(reinterpret_cast<const char *>(dump.values.data()),
              static_cast<std::streamsize>(dump.values.size() * sizeof(float)));
    if (!out) throw data_error("short write on activation dump: " + path);
}

ActivationDump load_activation_dump(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open activation dump: " + path);
    char magic[16];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kDumpMagic, sizeof(magic)) != 0) {
        throw data_error("activation dump has bad magic: " + path);
    }
    uint32_t header[3];
    uint8_t policy = 0;
    in.read(reinterpret_cast<char *>(header), sizeof(header));
    in.read(reinterpret_cast<char *>(&policy), 1);
    if (!in || policy > 1) throw data_error("activation dump has corrupt header: " + path);
    ActivationDump dump;
    dump.prompt_count = static_cast<int>(header[0]);
    dump.num_layers = static_cast<int>(header[1]);
    dump.mlp_width = static_cast<int>(header[2]);
    dump.position_policy = static_cast<ActivationDump::Position>(policy);
    size_t expect = static_cast<size_t>(dump.prompt_count) * dump.num_layers * dump.mlp_width;
    dump.values.resize(expect);
    in.read(reinterpret_cast<char *>(dump.values.data()),
            static_cast<std::streamsize>(expect * sizeof(float)));
    if (static_cast<size_t>(in.gcount()) != expect * sizeof(float)) {
        throw data_error("activation dump truncated: " + path);
    }
    for (float v : dump.values) {
        if (!std::isfinite(v)) throw numeric_error("non-finite value in activation dump");
    }
    return dump;
}

LocalizationResult localize_from_dumps(const ActivationDump & probes,
                                       const ActivationDump & baselines, double epsilon) {
    if (probes.num_layers != baselines.num_layers || probes.mlp_width != baselines.mlp_width) {
        throw data_error("probe and baseline dumps disagree on shape");
    }
    const int L = probes.num_layers, M = probes.mlp_width;
    size_t per_prompt = static_cast<size_t>(L) * M;
    RunningStats stats(L, M);
    std::vector<double> row(per_prompt);
    for (int p = 0; p < baselines.prompt_count; ++p) {
        for (size_t c = 0; c < per_prompt; ++c) {
            row[c] = baselines.values[static_cast<size_t>(p) * per_prompt + c];
        }
        stats.add_sample(row);
    }
    BaselineStats base = stats.finalize(epsilon);
    std::vector<double> z(static_cast<size_t>(probes.prompt_count) * per_prompt);
    for (int p = 0; p < probes.prompt_count; ++p) {
        for (size_t c = 0; c < per_prompt; ++c) {
            z[static_cast<size_t>(p) * per_prompt + c] =
                zscore(probes.values[static_cast<size_t>(p) * per_prompt + c], base.mu[c],
                       base.sigma[c], epsilon);
        }
    }
    LocalizationResult out;
    out.table = stability_scores(z, probes.prompt_count, L, M, epsilon);
    out.ranking = rank_cells(out.table);
    return out;
}

} // namespace entcell
