// SPDX-License-Identifier: Apache-2.0
#include "leap/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

namespace leap {

namespace {

constexpr char kMagic[4] = {'L', 'P', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::ostream& out, std::uint16_t v) {
    const unsigned char bytes[2] = {static_cast<unsigned char>(v & 0xff),
                                    static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(bytes), 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char bytes[4];
    for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

void put_f64(std::ostream& out, double v) {
    std::uint64_t bits{};
    std::memcpy(&bits, &v, 8);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint16_t get_u16(std::istream& in) {
    unsigned char bytes[2];
    if (!in.read(reinterpret_cast<char*>(bytes), 2)) throw FormatError("checkpoint truncated");
    return static_cast<std::uint16_t>(bytes[0] | (bytes[1] << 8));
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) throw FormatError("checkpoint truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& in) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw FormatError("checkpoint truncated");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    double v{};
    std::memcpy(&v, &bits, 8);
    return v;
}

std::string get_name(std::istream& in) {
    const std::uint16_t len = get_u16(in);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw FormatError("checkpoint truncated");
    return name;
}

struct TableEntry {
    std::string name;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
};

void write_table(std::ostream& out, const std::vector<std::pair<std::string, TensorPtr>>& items) {
    put_u32(out, static_cast<std::uint32_t>(items.size()));
    for (const auto& [name, tensor] : items) {
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, static_cast<std::uint32_t>(tensor->rows()));
        put_u32(out, static_cast<std::uint32_t>(tensor->cols()));
    }
    for (const auto& [name, tensor] : items) {
        for (double v : tensor->values) put_f64(out, v);
    }
}

std::vector<std::pair<std::string, TensorPtr>> read_table(std::istream& in) {
    const std::uint32_t count = get_u32(in);
    if (count > 1u << 20) throw FormatError("checkpoint tensor table implausibly large");
    std::vector<TableEntry> entries(count);
    for (auto& e : entries) {
        e.name = get_name(in);
        e.rows = get_u32(in);
        e.cols = get_u32(in);
        if (e.rows == 0 || e.cols == 0 || std::uint64_t{e.rows} * e.cols > (1u << 28)) {
            throw FormatError("checkpoint tensor '" + e.name + "' has invalid shape");
        }
    }
    std::vector<std::pair<std::string, TensorPtr>> items;
    items.reserve(count);
    for (const auto& e : entries) {
        auto t = make_tensor(e.rows, e.cols);
        for (double& v : t->values) v = get_f64(in);
        items.emplace_back(e.name, t);
    }
    return items;
}

std::vector<std::pair<std::string, TensorPtr>> named_parameters(ToyModel& model) {
    std::vector<std::pair<std::string, TensorPtr>> out;
    out.emplace_back("embedding", model.embedding);
    out.emplace_back("positional", model.positional);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto& layer = model.layers[l];
        const std::string base = "layer" + std::to_string(l);
        out.emplace_back(base + ".attn.wq", layer.wq.weight);
        out.emplace_back(base + ".attn.wk", layer.wk.weight);
        out.emplace_back(base + ".attn.wv", layer.wv.weight);
        out.emplace_back(base + ".attn.wo", layer.wo.weight);
        out.emplace_back(base + ".ffn.w1", layer.w1.weight);
        out.emplace_back(base + ".ffn.w2", layer.w2.weight);
        out.emplace_back(base + ".ln1.gamma", layer.ln1_gamma);
        out.emplace_back(base + ".ln1.beta", layer.ln1_beta);
        out.emplace_back(base + ".ln2.gamma", layer.ln2_gamma);
        out.emplace_back(base + ".ln2.beta", layer.ln2_beta);
    }
    out.emplace_back("final_ln.gamma", model.final_gamma);
    out.emplace_back("final_ln.beta", model.final_beta);
    out.emplace_back("classifier.w", model.classifier_w);
    out.emplace_back("classifier.b", model.classifier_b);
    return out;
}

} // namespace

void save_checkpoint(const std::string& path, ToyModel& model, const ThresholdBank* bank,
                     const nlohmann::ordered_json& extra_meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open checkpoint for writing: " + path);

    const auto& cfg = model.config();
    nlohmann::ordered_json meta;
    meta["model"] = {{"layers", cfg.layers},   {"hidden", cfg.hidden}, {"heads", cfg.heads},
                     {"ffn", cfg.ffn},         {"vocab", cfg.vocab},   {"seq_len", cfg.seq_len},
                     {"classes", cfg.classes}};
    meta["profile"] = model.profile().name;
    if (bank != nullptr) {
        meta["thresholds"] = {{"temperature", bank->temperature},
                              {"target_ratio", bank->target_ratio},
                              {"lambda_max", bank->lambda_max},
                              {"lambda_min", bank->lambda_min}};
    }
    nlohmann::ordered_json table = nlohmann::ordered_json::array();
    for (const auto* p : model.prunable()) {
        table.push_back({{"name", p->name},
                         {"layer", p->layer},
                         {"sublayer", p->sublayer == PrunableMatrix::SubLayer::mha ? "mha" : "fc"},
                         {"count", p->element_count()},
                         {"block", p->geometry.block}});
    }
    meta["prunable"] = table;
    for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it) {
        meta[it.key()] = it.value();
    }

    const std::string meta_str = meta.dump();
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(meta_str.size()));
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

    write_table(out, named_parameters(model));

    if (bank != nullptr) {
        put_u32(out, static_cast<std::uint32_t>(bank->sigma->size()));
        for (double v : bank->sigma->values) put_f64(out, v);
        std::vector<std::pair<std::string, TensorPtr>> scores;
        for (auto* p : model.prunable()) {
            scores.emplace_back(p->name + ".score", p->score);
        }
        write_table(out, scores);
    } else {
        put_u32(out, 0);
        put_u32(out, 0);
    }
    if (!out) throw FormatError("failed writing checkpoint: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint: " + path);

    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("not a checkpoint file: " + path);
    }
    if (get_u32(in) != kVersion) throw FormatError("unsupported checkpoint version");

    const std::uint32_t meta_len = get_u32(in);
    if (meta_len > (1u << 24)) throw FormatError("checkpoint metadata implausibly large");
    std::string meta_str(meta_len, '\0');
    if (!in.read(meta_str.data(), meta_len)) throw FormatError("checkpoint truncated");

    CheckpointData data;
    try {
        data.meta = nlohmann::ordered_json::parse(meta_str);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
    }

    data.tensors = read_table(in);
    const std::uint32_t sigma_count = get_u32(in);
    if (sigma_count > (1u << 20)) throw FormatError("checkpoint sigma vector implausibly large");
    data.sigma.resize(sigma_count);
    for (double& v : data.sigma) v = get_f64(in);
    data.scores = read_table(in);
    return data;
}

namespace {

ModelConfig config_from_meta(const nlohmann::ordered_json& meta) {
    try {
        const auto& m = meta.at("model");
        ModelConfig cfg;
        cfg.layers = m.at("layers").get<std::size_t>();
        cfg.hidden = m.at("hidden").get<std::size_t>();
        cfg.heads = m.at("heads").get<std::size_t>();
        cfg.ffn = m.at("ffn").get<std::size_t>();
        cfg.vocab = m.at("vocab").get<std::size_t>();
        cfg.seq_len = m.at("seq_len").get<std::size_t>();
        cfg.classes = m.at("classes").get<std::size_t>();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint metadata missing model fields: ") + e.what());
    }
}

} // namespace

void load_parameters_into(ToyModel& model, const CheckpointData& data) {
    std::map<std::string, TensorPtr> stored(data.tensors.begin(), data.tensors.end());
    for (auto& [name, tensor] : named_parameters(model)) {
        auto it = stored.find(name);
        if (it == stored.end()) {
            throw FormatError("checkpoint is missing tensor '" + name + "'");
        }
        if (!it->second->same_shape(*tensor)) {
            throw FormatError("checkpoint tensor '" + name + "' has the wrong shape");
        }
        tensor->values = it->second->values;
    }
}

ToyModel model_from_checkpoint(const CheckpointData& data) {
    const ModelConfig cfg = config_from_meta(data.meta);
    GranularityProfile profile = profile_from_name(data.meta.value("profile", "s1"));
    ToyModel model(cfg, profile, Rng(0), Rng(0));
    load_parameters_into(model, data);

    if (!data.scores.empty()) {
        std::map<std::string, TensorPtr> stored(data.scores.begin(), data.scores.end());
        for (auto* p : model.prunable()) {
            auto it = stored.find(p->name + ".score");
            if (it == stored.end()) {
                throw FormatError("checkpoint is missing scores for '" + p->name + "'");
            }
            if (!it->second->same_shape(*p->score)) {
                throw FormatError("checkpoint scores for '" + p->name + "' have the wrong shape");
            }
            p->score->values = it->second->values;
        }
    }
    return model;
}

ThresholdBank bank_from_checkpoint(const CheckpointData& data) {
    if (!data.has_thresholds()) {
        throw FormatError("checkpoint contains no learnable thresholds");
    }
    nlohmann::ordered_json t;
    try {
        t = data.meta.at("thresholds");
    } catch (const nlohmann::json::exception&) {
        throw FormatError("checkpoint metadata lacks threshold settings");
    }
    std::vector<std::size_t> counts;
    for (const auto& row : data.meta.at("prunable")) {
        counts.push_back(row.at("count").get<std::size_t>());
    }
    if (counts.size() != data.sigma.size()) {
        throw FormatError("checkpoint sigma length does not match the prunable table");
    }
    ThresholdBank bank(counts.size(), t.at("temperature").get<double>(),
                       t.at("target_ratio").get<double>(), t.at("lambda_max").get<double>(),
                       t.at("lambda_min").get<double>(), counts);
    bank.sigma->values = data.sigma;
    return bank;
}

} // namespace leap
