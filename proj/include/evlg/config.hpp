#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evlg/data.hpp"
#include "evlg/decode.hpp"
#include "evlg/model.hpp"
#include "evlg/quantizer.hpp"
#include "evlg/t2i.hpp"

namespace evlg {

// Everything a pipeline run depends on. Parsed from flat "key = value" text.
struct RunConfig {
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    std::size_t corpus_count = 64;
    CorpusOptions corpus;

    QuantizerConfig quantizer;
    std::size_t vq_steps = 300;
    std::size_t vq_batch_size = 16;

    ModelConfig model;
    TrainerConfig train;
    std::size_t train_steps = 300;
    std::size_t log_every = 25;

    T2IMode t2i_mode = T2IMode::TwoStage;
    double rec_weight = 1.0;

    CompareConfig compare;
    SamplerConfig sampler;

    std::size_t vqa_steps = 1000;
    bool vqa_joint = false;

    std::size_t filter_max_words = 15;
    double filter_threshold = 0.5;

    // Copies the shared fields (image size, grid, vocabularies, text budget)
    // into the nested configs and validates everything. Throws ConfigError.
    void finalize();
};

struct ConfigKey {
    std::string key;
    std::string default_value;
    std::string doc;
};

// Every recognized key with its default and a one-line description.
std::vector<ConfigKey> config_keys();

// Unknown keys, malformed lines and bad values raise ConfigError naming the
// key and line. The result is finalized.
RunConfig parse_config(const std::string& text, const std::string& origin = "config");
RunConfig load_config(const std::filesystem::path& path);

// Canonical text that parses back to the same configuration.
std::string to_config_text(const RunConfig& config);

}  // namespace evlg
