#include "entcell/checkpoint.h"

#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace entcell {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json cell_to_json(const NeuronId & c) { return json::array({c.layer, c.neuron}); }

NeuronId cell_from_json(const json & j) {
    if (!j.is_array() || j.size() != 2) throw data_error("checkpoint: malformed cell");
    return NeuronId{j[0].get<int>(), j[1].get<int>()};
}

json config_to_json(const ModelConfig & c) {
    json j;
    j["num_layers"] = c.num_layers;
    j["hidden_dim"] = c.hidden_dim;
    j["mlp_width"] = c.mlp_width;
    j["vocab_size"] = c.vocab_size;
    j["seed"] = c.seed;
    j["noise_scale"] = c.noise_scale;
    j["attention_layers"] = c.attention_layers;
    j["alias_shared_weight"] = c.alias_shared_weight;
    return j;
}

ModelConfig config_from_json(const json & j) {
    ModelConfig c;
    c.num_layers = j.at("num_layers").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.mlp_width = j.at("mlp_width").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    c.noise_scale = j.at("noise_scale").get<double>();
    c.attention_layers = j.at("attention_layers").get<std::vector<int>>();
    c.alias_shared_weight = j.at("alias_shared_weight").get<double>();
    return c;
}

json spec_to_json(const GroundTruthSpec & s) {
    json j;
    json ents = json::array();
    for (const auto & e : s.entities) {
        json je;
        je["entity_id"] = e.entity_id;
        je["cell"] = cell_to_json(e.cell);
        json extra = json::array();
        for (const auto & x : e.extra_cells) extra.push_back(cell_to_json(x));
        je["extra_cells"] = extra;
        je["canonical_last_token"] = e.canonical_last_token;
        je["alias_last_tokens"] = e.alias_last_tokens;
        ents.push_back(je);
    }
    j["entities"] = ents;
    json facts = json::array();
    for (const auto & f : s.facts) {
        json jf;
        jf["entity_id"] = f.entity_id;
        jf["relation_token"] = f.relation_token;
        jf["answer_token"] = f.answer_token;
        jf["fact_layer"] = f.fact_layer;
        facts.push_back(jf);
    }
    j["facts"] = facts;
    json dis = json::array();
    for (const auto & d : s.distractors) {
        json jd;
        jd["entity_id"] = d.entity_id;
        jd["cell"] = cell_to_json(d.cell);
        jd["consistency"] = d.consistency;
        dis.push_back(jd);
    }
    j["distractors"] = dis;
    j["context_marked_tokens"] = s.context_marked_tokens;
    j["sink_tokens"] = s.sink_tokens;
    j["unknown_name_tokens"] = s.unknown_name_tokens;
    j["wrapper_tokens"] = s.wrapper_tokens;
    json cal = json::object();
    for (const auto & [id, probe] : s.calibration) {
        json jp;
        jp["prompts"] = probe.prompts;
        jp["positions"] = probe.positions;
        cal[id] = jp;
    }
    j["calibration"] = cal;
    return j;
}

GroundTruthSpec spec_from_json(const json & j) {
    GroundTruthSpec s;
    for (const auto & je : j.at("entities")) {
        PlantedEntity e;
        e.entity_id = je.at("entity_id").get<std::string>();
        e.cell = cell_from_json(je.at("cell"));
        for (const auto & x : je.at("extra_cells")) e.extra_cells.push_back(cell_from_json(x));
        e.canonical_last_token = je.at("canonical_last_token").get<int>();
        e.alias_last_tokens = je.at("alias_last_tokens").get<std::vector<int>>();
        s.entities.push_back(std::move(e));
    }
    for (const auto & jf : j.at("facts")) {
        PlantedFact f;
        f.entity_id = jf.at("entity_id").get<std::string>();
        f.relation_token = jf.at("relation_token").get<int>();
        f.answer_token = jf.at("answer_token").get<int>();
        f.fact_layer = jf.at("fact_layer").get<int>();
        s.facts.push_back(std::move(f));
    }
    for (const auto & jd : j.at("distractors")) {
        DistractorSpec d;
        d.entity_id = jd.at("entity_id").get<std::string>();
        d.cell = cell_from_json(jd.at("cell"));
        d.consistency = jd.at("consistency").get<double>();
        s.distractors.push_back(std::move(d));
    }
    s.context_marked_tokens = j.at("context_marked_tokens").get<std::vector<int>>();
    s.sink_tokens = j.at("sink_tokens").get<std::vector<int>>();
    s.unknown_name_tokens = j.at("unknown_name_tokens").get<std::vector<int>>();
    s.wrapper_tokens = j.at("wrapper_tokens").get<std::vector<int>>();
    for (const auto & [id, jp] : j.at("calibration").items()) {
        CalibrationProbe probe;
        probe.prompts = jp.at("prompts").get<std::vector<std::vector<int>>>();
        probe.positions = jp.at("positions").get<std::vector<int>>();
        s.calibration[id] = std::move(probe);
    }
    return s;
}

struct TensorWriter {
    std::ofstream out;
    json index = json::object();
    size_t offset = 0;

    explicit TensorWriter(const std::string & path) : out(path, std::ios::binary) {
        if (!out) throw data_error("cannot write tensor blob: " + path);
    }
    void write(const std::string & name, const std::vector<float> & data,
               std::vector<long long> shape) {
        size_t expect = 1;
        for (long long s : shape) expect *= static_cast<size_t>(s);
        if (expect != data.size()) throw data_error("tensor shape mismatch on save: " + name);
        json entry;
        entry["offset"] = offset;
        entry["shape"] = shape;
        index[name] = entry;
        out.write(reinterpret_cast<const char *>(data.data()),
                  static_cast<std::streamsize>(data.size() * sizeof(float)));
        offset += data.size() * sizeof(float);
    }
};

struct TensorReader {
    std::ifstream in;
    const json & index;
    size_t blob_size;

    TensorReader(const std::string & path, const json & idx) : in(path, std::ios::binary), index(idx) {
        if (!in) throw data_error("cannot open tensor blob: " + path);
        in.seekg(0, std::ios::end);
        blob_size = static_cast<size_t>(in.tellg());
    }
    std::vector<float> read(const std::string & name, std::vector<long long> expect_shape) {
        if (!index.contains(name)) throw data_error("checkpoint missing tensor: " + name);
        const json & entry = index.at(name);
        auto shape = entry.at("shape").get<std::vector<long long>>();
        if (shape != expect_shape) throw data_error("checkpoint dimension mismatch on tensor: " + name);
        size_t count = 1;
        for (long long s : shape) count *= static_cast<size_t>(s);
        size_t offset = entry.at("offset").get<size_t>();
        if (offset + count * sizeof(float) > blob_size) {
            throw data_error("checkpoint tensor blob truncated at: " + name);
        }
        std::vector<float> data(count);
        in.seekg(static_cast<std::streamoff>(offset));
        in.read(reinterpret_cast<char *>(data.data()),
                static_cast<std::streamsize>(count * sizeof(float)));
        if (static_cast<size_t>(in.gcount()) != count * sizeof(float)) {
            throw data_error("checkpoint tensor blob truncated at: " + name);
        }
        return data;
    }
};

json build_manifest(const Organism & org) {
    json manifest;
    manifest["format"] = "entcell-checkpoint-v1";
    manifest["config"] = config_to_json(org.config);
    manifest["ground_truth"] = spec_to_json(org.ground_truth.spec);
    json fact_cells = json::array();
    for (const auto & c : org.ground_truth.fact_cells) fact_cells.push_back(cell_to_json(c));
    manifest["fact_cells"] = fact_cells;
    manifest["fingerprint"] = org.fingerprint();
    return manifest;
}

void write_tensors(const Organism & org, const std::string & dir, json & manifest) {
    const auto & cfg = org.config;
    TensorWriter tw(dir + "/tensors.bin");
    tw.write("embeddings", org.embeddings, {cfg.vocab_size, cfg.hidden_dim});
    tw.write("unembedding", org.unembedding, {cfg.vocab_size, cfg.hidden_dim});
    for (int l = 0; l < cfg.num_layers; ++l) {
        const auto & lw = org.layers[static_cast<size_t>(l)];
        std::string p = "layer" + std::to_string(l) + ".";
        tw.write(p + "w_in", lw.w_in, {cfg.hidden_dim, cfg.mlp_width});
        tw.write(p + "gate_slope", lw.gate_slope, {cfg.mlp_width});
        tw.write(p + "gate_thresh", lw.gate_thresh, {cfg.mlp_width});
        tw.write(p + "w_out", lw.w_out, {cfg.mlp_width, cfg.hidden_dim});
        if (lw.has_attention) {
            tw.write(p + "wq", lw.wq, {cfg.hidden_dim, cfg.hidden_dim});
            tw.write(p + "wk", lw.wk, {cfg.hidden_dim, cfg.hidden_dim});
            tw.write(p + "wv", lw.wv, {cfg.hidden_dim, cfg.hidden_dim});
        }
    }
    for (const auto & e : org.ground_truth.spec.entities) {
        tw.write("gt.identity." + e.entity_id, org.ground_truth.identity_directions.at(e.entity_id),
                 {cfg.hidden_dim});
        tw.write("gt.shared." + e.entity_id, org.ground_truth.shared_components.at(e.entity_id),
                 {cfg.hidden_dim});
    }
    manifest["tensors"] = tw.index;
}

Organism read_checkpoint(const std::string & dir, json & manifest_out) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw data_error("cannot open checkpoint manifest: " + dir);
    json manifest;
    try {
        manifest = json::parse(mf);
    } catch (const std::exception & e) {
        throw data_error(std::string("corrupt checkpoint manifest: ") + e.what());
    }
    if (manifest.value("format", "") != "entcell-checkpoint-v1") {
        throw data_error("unrecognized checkpoint format");
    }
    Organism org;
    try {
        org.config = config_from_json(manifest.at("config"));
        org.ground_truth.spec = spec_from_json(manifest.at("ground_truth"));
        for (const auto & c : manifest.at("fact_cells")) {
            org.ground_truth.fact_cells.push_back(cell_from_json(c));
        }
    } catch (const data_error &) {
        throw;
    } catch (const std::exception & e) {
        throw data_error(std::string("corrupt checkpoint manifest: ") + e.what());
    }
    org.config.validate();
    const auto & cfg = org.config;

    TensorReader tr(dir + "/tensors.bin", manifest.at("tensors"));
    org.embeddings = tr.read("embeddings", {cfg.vocab_size, cfg.hidden_dim});
    org.unembedding = tr.read("unembedding", {cfg.vocab_size, cfg.hidden_dim});
    org.layers.resize(static_cast<size_t>(cfg.num_layers));
    for (int l = 0; l < cfg.num_layers; ++l) {
        auto & lw = org.layers[static_cast<size_t>(l)];
        std::string p = "layer" + std::to_string(l) + ".";
        lw.w_in = tr.read(p + "w_in", {cfg.hidden_dim, cfg.mlp_width});
        lw.gate_slope = tr.read(p + "gate_slope", {cfg.mlp_width});
        lw.gate_thresh = tr.read(p + "gate_thresh", {cfg.mlp_width});
        lw.w_out = tr.read(p + "w_out", {cfg.mlp_width, cfg.hidden_dim});
        lw.has_attention = std::find(cfg.attention_layers.begin(), cfg.attention_layers.end(), l) !=
                           cfg.attention_layers.end();
        if (lw.has_attention) {
            lw.wq = tr.read(p + "wq", {cfg.hidden_dim, cfg.hidden_dim});
            lw.wk = tr.read(p + "wk", {cfg.hidden_dim, cfg.hidden_dim});
            lw.wv = tr.read(p + "wv", {cfg.hidden_dim, cfg.hidden_dim});
        }
    }
    for (const auto & e : org.ground_truth.spec.entities) {
        org.ground_truth.planted_cells[e.entity_id] = e.cell;
        org.ground_truth.identity_directions[e.entity_id] =
            tr.read("gt.identity." + e.entity_id, {cfg.hidden_dim});
        org.ground_truth.shared_components[e.entity_id] =
            tr.read("gt.shared." + e.entity_id, {cfg.hidden_dim});
    }
    std::string stored = manifest.value("fingerprint", "");
    if (!stored.empty() && stored != org.fingerprint()) {
        throw data_error("checkpoint fingerprint mismatch (corrupt or edited)");
    }
    manifest_out = std::move(manifest);
    return org;
}

} // namespace

void save_checkpoint(const Organism & organism, const std::string & dir) {
    fs::create_directories(dir);
    json manifest = build_manifest(organism);
    write_tensors(organism, dir, manifest);
    std::ofstream mf(dir + "/manifest.json", std::ios::binary);
    if (!mf) throw data_error("cannot write checkpoint manifest: " + dir);
    mf << manifest.dump(2) << "\n";
}

Organism load_checkpoint(const std::string & dir) {
    json manifest;
    return read_checkpoint(dir, manifest);
}

void save_world_checkpoint(const Organism & organism, const ToyWorld & world,
                           const std::string & dir) {
    fs::create_directories(dir);
    json manifest = build_manifest(organism);
    write_tensors(organism, dir, manifest);
    json w;
    w["vocab"] = world.vocab.words();
    w["unknown_names"] = world.unknown_names;
    json neg = json::object();
    for (const auto & [id, toks] : world.negative_variants) neg[id] = toks;
    w["negative_variants"] = neg;
    manifest["world"] = w;
    std::ofstream mf(dir + "/manifest.json", std::ios::binary);
    if (!mf) throw data_error("cannot write checkpoint manifest: " + dir);
    mf << manifest.dump(2) << "\n";
}

LoadedWorld load_world_checkpoint(const std::string & dir) {
    json manifest;
    LoadedWorld out;
    out.organism = read_checkpoint(dir, manifest);
    if (!manifest.contains("world")) throw data_error("checkpoint has no world section");
    const json & w = manifest.at("world");
    auto stored = w.at("vocab").get<std::vector<std::string>>();
    for (const auto & word : stored) {
        // Reserved ids are pre-seeded by the constructor; re-adding is a no-op.
        out.vocab.add(word);
    }
    if (out.vocab.words() != stored) {
        throw data_error("checkpoint vocabulary does not start with the reserved id block");
    }
    out.unknown_names = w.at("unknown_names").get<std::vector<std::string>>();
    for (const auto & [id, toks] : w.at("negative_variants").items()) {
        out.negative_variants[id] = toks.get<std::vector<int>>();
    }
    return out;
}

} // namespace entcell
