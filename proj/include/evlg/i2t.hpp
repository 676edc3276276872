#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "evlg/data.hpp"
#include "evlg/decode.hpp"
#include "evlg/model.hpp"
#include "evlg/quantizer.hpp"

namespace evlg {

// Text tokens for image tokens, ending in exactly one EOS, at most
// max_text_length long. PAD, BOS, SEP and ids past the word list are never
// produced.
std::vector<int> caption_tokens(const Model& model, std::span<const int> image_tokens,
                                const SamplerConfig& sampler = greedy_sampler(), std::uint64_t seed = 0);
// Quantizes the image first.
std::vector<int> caption(const Model& model, const Quantizer& quantizer, const Image& image,
                         const SamplerConfig& sampler = greedy_sampler(), std::uint64_t seed = 0);

// Text layout [question..., SEP, answer..., EOS].
std::vector<int> vqa_layout(std::span<const int> question, std::span<const int> answer);

// Greedy answer (ending in EOS) after [z, question, SEP]. Throws ContractError
// when the question leaves no room for SEP, one answer token and EOS.
std::vector<int> vqa_answer(const Model& model, std::span<const int> image_tokens, std::span<const int> question);

struct VqaItem {
    std::vector<int> image_tokens;
    std::vector<int> question;
    std::vector<int> answer;  // without EOS
};

std::vector<VqaItem> make_vqa_items(std::span<const Pair> corpus, std::span<const VqaExample> examples,
                                    const std::vector<VisualTokens>& image_tokens, const Vocabulary& vocab);

// Answer-and-EOS negative log-likelihood (question and SEP are context only).
Tensor vqa_loss(const Model& model, const VqaItem& item);

struct VqaTrainerConfig {
    AdamConfig adam;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    // Keep the text-to-image caption loss active alongside the answer loss.
    bool joint = false;
};

// Fine-tunes the transformer only; the quantizer is not touched.
class VqaTrainer {
   public:
    VqaTrainer(Model& model, std::vector<VqaItem> items, VqaTrainerConfig config,
               std::vector<TokenPair> captions = {});

    double train_step();  // TrainingError on a non-finite loss

   private:
    Model& model_;
    std::vector<VqaItem> items_;
    std::vector<TokenPair> captions_;
    VqaTrainerConfig config_;
    Adam optimizer_;
    std::uint64_t step_ = 0;
};

struct VqaEval {
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

// Exact match of the greedy answer. When `dump` is given, writes
// "question\tprediction\tgold\texact_match" lines.
VqaEval evaluate_vqa(const Model& model, std::span<const VqaItem> items, const Vocabulary& vocab,
                     std::ostream* dump = nullptr);

// Sentence BLEU@4: clipped 1..4-gram precisions, uniform geometric mean and
// brevity penalty against the closest reference length. 0 for an empty
// candidate or when some n-gram order has no match.
double bleu4(std::span<const std::string> candidate, const std::vector<std::vector<std::string>>& references);
// Corpus BLEU@4: n-gram counts and lengths pooled over all sentences.
double corpus_bleu4(const std::vector<std::vector<std::string>>& candidates,
                    const std::vector<std::vector<std::vector<std::string>>>& references);

std::vector<std::string> split_words(const std::string& text);

}  // namespace evlg
