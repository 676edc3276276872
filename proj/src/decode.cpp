#include "evlg/decode.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <thread>

#include "evlg/data.hpp"
#include "evlg/errors.hpp"

namespace evlg {

const char* strategy_name(SamplingStrategy strategy) {
    switch (strategy) {
        case SamplingStrategy::Greedy: return "greedy";
        case SamplingStrategy::Temperature: return "temperature";
        case SamplingStrategy::TopK: return "topk";
    }
    return "?";
}

SamplingStrategy parse_strategy(const std::string& name) {
    for (auto s : {SamplingStrategy::Greedy, SamplingStrategy::Temperature, SamplingStrategy::TopK})
        if (name == strategy_name(s)) return s;
    throw ConfigError("unknown sampling strategy '" + name + "' (greedy, temperature, topk)");
}

void SamplerConfig::validate(std::size_t vocab) const {
    if (num_candidates == 0) throw ConfigError("num_candidates must be at least 1");
    if (strategy == SamplingStrategy::Greedy) return;
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ConfigError("temperature must be positive, got " + std::to_string(temperature));
    }
    if (strategy == SamplingStrategy::TopK && (top_k == 0 || top_k > vocab)) {
        throw ConfigError("top_k " + std::to_string(top_k) + " outside [1, " + std::to_string(vocab) + "]");
    }
}

SamplerConfig greedy_sampler() {
    SamplerConfig s;
    s.strategy = SamplingStrategy::Greedy;
    return s;
}

int sample_token(std::span<const double> logits, const SamplerConfig& sampler, Rng& rng) {
    const double kNegInf = -std::numeric_limits<double>::infinity();
    std::vector<int> order(logits.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return logits[a] > logits[b]; });
    if (order.empty() || logits[order[0]] == kNegInf) throw ContractError("sample_token: no token is allowed");
    if (sampler.strategy == SamplingStrategy::Greedy) return order[0];

    std::size_t keep = logits.size();
    if (sampler.strategy == SamplingStrategy::TopK) keep = std::min(keep, sampler.top_k);
    while (keep > 1 && logits[order[keep - 1]] == kNegInf) --keep;

    const double top = logits[order[0]];
    std::vector<double> weights(keep);
    double total = 0.0;
    for (std::size_t i = 0; i < keep; ++i) {
        weights[i] = std::exp((logits[order[i]] - top) / sampler.temperature);
        total += weights[i];
    }
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < keep; ++i) {
        if (u < weights[i]) return order[i];
        u -= weights[i];
    }
    return order[keep - 1];
}

std::vector<int> sample_sequence(const NextLogits& next, std::size_t length, const SamplerConfig& sampler,
                                 std::uint64_t seed, int stop_token) {
    Rng rng(seed);
    std::vector<int> out;
    while (out.size() < length) {
        const std::vector<double> logits = next(out);
        out.push_back(sample_token(logits, sampler, rng));
        if (stop_token >= 0 && out.back() == stop_token) break;
    }
    return out;
}

std::vector<int> sample_image_tokens(const Model& model, std::span<const int> text, const SamplerConfig& sampler,
                                     std::uint64_t seed) {
    std::vector<int> source(text.begin(), text.end());
    auto next = [&](std::span<const int> prefix) {
        return model.next_logits({Direction::TextToImage, source, {prefix.begin(), prefix.end()}});
    };
    auto z = sample_sequence(next, model.config().image_length(), sampler, seed);
    if (z.size() != model.config().image_length()) throw ContractError("sampled image sequence has the wrong length");
    return z;
}

std::vector<int> sample_text_tokens(const Model& model, std::span<const int> image, std::span<const int> prefix,
                                    const SamplerConfig& sampler, std::uint64_t seed, std::span<const int> banned) {
    const std::size_t budget = model.config().max_text_length;
    if (prefix.size() >= budget) {
        throw ContractError("text prefix of " + std::to_string(prefix.size()) + " tokens leaves no room in budget " +
                            std::to_string(budget));
    }
    std::vector<int> source(image.begin(), image.end());
    std::vector<int> context(prefix.begin(), prefix.end());
    auto next = [&](std::span<const int> generated) {
        std::vector<int> text = context;
        text.insert(text.end(), generated.begin(), generated.end());
        auto logits = model.next_logits({Direction::ImageToText, text, source});
        for (int id : banned) logits.at(static_cast<std::size_t>(id)) = -std::numeric_limits<double>::infinity();
        return logits;
    };
    return sample_sequence(next, budget - prefix.size(), sampler, seed, Vocabulary::kEos);
}

std::vector<std::vector<int>> sample_image_candidates(const Model& model, std::span<const int> text,
                                                      const SamplerConfig& sampler, std::size_t threads) {
    sampler.validate(model.config().image_vocab);
    std::vector<std::vector<int>> out(sampler.num_candidates);
    const std::size_t workers = std::clamp<std::size_t>(threads, 1, out.size());
    auto run = [&](std::size_t worker) {
        for (std::size_t i = worker; i < out.size(); i += workers)
            out[i] = sample_image_tokens(model, text, sampler, derive_seed(sampler.seed, i));
    };
    if (workers == 1) {
        run(0);
        return out;
    }
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
    return out;
}

RerankResult rerank_select(const std::vector<std::vector<int>>& candidates, std::span<const int> text,
                           const RerankScorer& scorer) {
    if (candidates.empty()) throw ContractError("rerank_select: no candidates");
    RerankResult r;
    for (const auto& c : candidates) r.scores.push_back(scorer(text, c));
    for (std::size_t i = 1; i < r.scores.size(); ++i)
        if (r.scores[i] > r.scores[r.best]) r.best = i;
    return r;
}

double cycle_consistency_score(const Model& model, std::span<const int> text, std::span<const int> image) {
    NoGradGuard no_grad;
    JointSequence seq{Direction::ImageToText, {text.begin(), text.end()}, {image.begin(), image.end()}};
    return -loss_img2txt(model.forward(seq).logits, text).item();
}

RerankScorer cycle_consistency_scorer(const Model& model) {
    return [&model](std::span<const int> text, std::span<const int> image) {
        return cycle_consistency_score(model, text, image);
    };
}

void write_score_table(std::ostream& out, const RerankResult& result) {
    out << "candidate_index\tscore\n" << std::setprecision(17);
    for (std::size_t i = 0; i < result.scores.size(); ++i) out << i << '\t' << result.scores[i] << '\n';
}

}  // namespace evlg
