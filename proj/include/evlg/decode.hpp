#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "evlg/model.hpp"

namespace evlg {

enum class SamplingStrategy { Greedy, Temperature, TopK };

const char* strategy_name(SamplingStrategy strategy);
SamplingStrategy parse_strategy(const std::string& name);  // ConfigError if unknown

struct SamplerConfig {
    SamplingStrategy strategy = SamplingStrategy::TopK;
    double temperature = 1.0;
    std::size_t top_k = 64;
    std::uint64_t seed = 0;
    std::size_t num_candidates = 10;

    // Throws ConfigError. Greedy ignores temperature, top_k and seed.
    void validate(std::size_t vocab) const;
};

SamplerConfig greedy_sampler();

// One draw from a logit vector. Entries at -inf are never chosen; ties in
// greedy and top-k selection go to the lowest id.
int sample_token(std::span<const double> logits, const SamplerConfig& sampler, Rng& rng);

// Logits for the next token given the tokens generated so far.
using NextLogits = std::function<std::vector<double>(std::span<const int> prefix)>;

// Appends up to `length` tokens. Generation stops after `stop_token` when it
// is non-negative.
std::vector<int> sample_sequence(const NextLogits& next, std::size_t length, const SamplerConfig& sampler,
                                 std::uint64_t seed, int stop_token = -1);

// Image tokens for a caption.
std::vector<int> sample_image_tokens(const Model& model, std::span<const int> text, const SamplerConfig& sampler,
                                     std::uint64_t seed);

// Text continuation after `prefix`, conditioned on the image tokens. `banned`
// ids are never produced; generation ends at EOS or when the text budget is full.
std::vector<int> sample_text_tokens(const Model& model, std::span<const int> image, std::span<const int> prefix,
                                    const SamplerConfig& sampler, std::uint64_t seed, std::span<const int> banned = {});

// num_candidates image sequences; candidate i uses derive_seed(sampler.seed, i).
// Candidates are generated on up to `threads` workers.
std::vector<std::vector<int>> sample_image_candidates(const Model& model, std::span<const int> text,
                                                      const SamplerConfig& sampler, std::size_t threads = 1);

// (text, image tokens) -> score, higher is a better match.
using RerankScorer = std::function<double(std::span<const int> text, std::span<const int> image)>;

struct RerankResult {
    std::size_t best = 0;
    std::vector<double> scores;  // one per candidate, in input order
};

// Argmax of the scores, lowest index on ties. Throws ContractError when empty.
RerankResult rerank_select(const std::vector<std::vector<int>>& candidates, std::span<const int> text,
                           const RerankScorer& scorer);

// -loss_img2txt(text | image): how well the model explains the text from the image.
double cycle_consistency_score(const Model& model, std::span<const int> text, std::span<const int> image);
RerankScorer cycle_consistency_scorer(const Model& model);

// "candidate_index\tscore" lines under a header.
void write_score_table(std::ostream& out, const RerankResult& result);

}  // namespace evlg
