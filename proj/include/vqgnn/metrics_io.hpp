// Metrics emission: metrics.jsonl (one JSON object per epoch) and curve.csv
// for convergence plots.
#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqgnn/common.hpp"
#include "vqgnn/trainer.hpp"

namespace vqgnn {

inline nlohmann::json metrics_record(const EpochMetrics& em) {
    return nlohmann::json{{"epoch", em.epoch},
                          {"train_loss", em.train_loss},
                          {"val_acc", em.val_acc},
                          {"test_acc", em.test_acc},
                          {"eps_per_layer", em.eps_per_layer},
                          {"messages_intra", em.messages_intra},
                          {"messages_codeword", em.messages_codeword},
                          {"wall_secs", em.wall_secs}};
}

inline void emit_metrics(const std::string& dir, const std::vector<EpochMetrics>& records) {
    std::ofstream jl(dir + "/metrics.jsonl");
    if (!jl) throw io_error("cannot write " + dir + "/metrics.jsonl");
    for (const auto& em : records) jl << metrics_record(em).dump() << '\n';

    std::ofstream csv(dir + "/curve.csv");
    if (!csv) throw io_error("cannot write " + dir + "/curve.csv");
    csv << "epoch,wall_secs,val_acc\n";
    for (const auto& em : records)
        csv << em.epoch << ',' << em.wall_secs << ',' << em.val_acc << '\n';
}

inline std::vector<EpochMetrics> parse_metrics(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw input_error("cannot open " + path);
    std::vector<EpochMetrics> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        EpochMetrics em;
        em.epoch = j.at("epoch").get<std::size_t>();
        em.train_loss = j.at("train_loss").get<double>();
        em.val_acc = j.at("val_acc").get<double>();
        em.test_acc = j.at("test_acc").get<double>();
        em.eps_per_layer = j.at("eps_per_layer").get<std::vector<double>>();
        em.messages_intra = j.at("messages_intra").get<std::size_t>();
        em.messages_codeword = j.at("messages_codeword").get<std::size_t>();
        em.wall_secs = j.at("wall_secs").get<double>();
        out.push_back(std::move(em));
    }
    return out;
}

}  // namespace vqgnn
