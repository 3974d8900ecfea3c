// JSON run configuration. Parsing is total: every accepted document maps onto
// a validated ModelConfig, unknown keys are rejected by name.
#pragma once

#include <string>

#include <json.hpp>

#include "vqgnn/common.hpp"
#include "vqgnn/trainer.hpp"

namespace vqgnn {

inline ConvKind conv_kind_from_string(const std::string& s) {
    if (s == "gcn") return ConvKind::GCN;
    if (s == "sage-mean") return ConvKind::SageMean;
    if (s == "gin") return ConvKind::GIN;
    if (s == "gat") return ConvKind::GAT;
    throw config_error("unknown conv kind: " + s);
}

inline std::string to_string(ConvKind k) {
    switch (k) {
        case ConvKind::GCN: return "gcn";
        case ConvKind::SageMean: return "sage-mean";
        case ConvKind::GIN: return "gin";
        case ConvKind::GAT: return "gat";
    }
    return "gcn";
}

inline SamplerKind sampler_from_string(const std::string& s) {
    if (s == "nodes") return SamplerKind::Nodes;
    if (s == "edges") return SamplerKind::Edges;
    if (s == "random-walk") return SamplerKind::RandomWalk;
    throw config_error("unknown sampler: " + s);
}

inline Nonlin nonlin_from_string(const std::string& s) {
    if (s == "identity") return Nonlin::Identity;
    if (s == "relu") return Nonlin::ReLU;
    if (s == "leaky-relu") return Nonlin::LeakyReLU;
    throw config_error("unknown non-linearity: " + s);
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known = {
        "conv",          "layers",        "hidden",         "codebook_size",
        "f_prod",        "batch_size",    "lr",             "smoothing",
        "gamma",         "beta",          "epochs",         "sampler",
        "seed",          "heads",         "lipschitz_bound", "score_clamp",
        "batch_norm",    "hidden_act",    "walk_len",       "early_stop_patience",
        "record_timing"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : known) ok = ok || it.key() == k;
        if (!ok) throw config_error("unknown config key: " + it.key());
    }
    ModelConfig c;
    if (j.contains("conv")) c.conv = conv_kind_from_string(j.at("conv").get<std::string>());
    if (j.contains("layers")) c.layers = j.at("layers").get<std::size_t>();
    if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::size_t>();
    if (j.contains("codebook_size")) c.codebook_size = j.at("codebook_size").get<std::size_t>();
    if (j.contains("f_prod")) c.f_prod = j.at("f_prod").get<std::size_t>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("lr")) c.lr = j.at("lr").get<double>();
    if (j.contains("smoothing")) c.smoothing = j.at("smoothing").get<double>();
    if (j.contains("gamma")) c.gamma = j.at("gamma").get<double>();
    if (j.contains("beta")) c.beta = j.at("beta").get<double>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("sampler")) c.sampler = sampler_from_string(j.at("sampler").get<std::string>());
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("heads")) c.heads = j.at("heads").get<std::size_t>();
    if (j.contains("lipschitz_bound")) c.lipschitz_bound = j.at("lipschitz_bound").get<double>();
    if (j.contains("score_clamp")) c.score_clamp = j.at("score_clamp").get<double>();
    if (j.contains("batch_norm")) c.batch_norm = j.at("batch_norm").get<bool>();
    if (j.contains("hidden_act")) c.hidden_act = nonlin_from_string(j.at("hidden_act").get<std::string>());
    if (j.contains("walk_len")) c.walk_len = j.at("walk_len").get<std::size_t>();
    if (j.contains("early_stop_patience"))
        c.early_stop_patience = j.at("early_stop_patience").get<std::size_t>();
    if (j.contains("record_timing")) c.record_timing = j.at("record_timing").get<bool>();
    c.validate();
    return c;
}

}  // namespace vqgnn
