#include "evlg/i2t.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "evlg/errors.hpp"

namespace evlg {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Continues `context` until EOS. The last free slot only admits EOS, so the
// result always ends in exactly one EOS.
std::vector<int> continue_text(const Model& model, std::span<const int> image_tokens, std::span<const int> context,
                               const SamplerConfig& sampler, std::uint64_t seed) {
    const std::size_t budget = model.config().max_text_length;
    if (context.size() + 1 > budget) throw ContractError("no room left for EOS in the text budget");
    const std::size_t words = Vocabulary().size();
    std::vector<int> source(image_tokens.begin(), image_tokens.end());
    std::vector<int> prefix(context.begin(), context.end());
    auto next = [&](std::span<const int> generated) {
        std::vector<int> text = prefix;
        text.insert(text.end(), generated.begin(), generated.end());
        auto logits = model.next_logits({Direction::ImageToText, text, source});
        for (int id : {Vocabulary::kPad, Vocabulary::kBos, Vocabulary::kSep}) logits[static_cast<std::size_t>(id)] = kNegInf;
        for (std::size_t v = words; v < logits.size(); ++v) logits[v] = kNegInf;
        if (text.size() + 1 == budget)
            for (std::size_t v = 0; v < logits.size(); ++v)
                if (static_cast<int>(v) != Vocabulary::kEos) logits[v] = kNegInf;
        return logits;
    };
    return sample_sequence(next, budget - prefix.size(), sampler, seed, Vocabulary::kEos);
}

}  // namespace

std::vector<int> caption_tokens(const Model& model, std::span<const int> image_tokens, const SamplerConfig& sampler,
                                std::uint64_t seed) {
    return continue_text(model, image_tokens, {}, sampler, seed);
}

std::vector<int> caption(const Model& model, const Quantizer& quantizer, const Image& image,
                         const SamplerConfig& sampler, std::uint64_t seed) {
    const auto tokens = quantizer.tokenize(stack_images(std::span<const Image>(&image, 1)));
    return caption_tokens(model, tokens[0], sampler, seed);
}

std::vector<int> vqa_layout(std::span<const int> question, std::span<const int> answer) {
    std::vector<int> text(question.begin(), question.end());
    text.push_back(Vocabulary::kSep);
    text.insert(text.end(), answer.begin(), answer.end());
    text.push_back(Vocabulary::kEos);
    return text;
}

std::vector<int> vqa_answer(const Model& model, std::span<const int> image_tokens, std::span<const int> question) {
    const std::size_t budget = model.config().max_text_length;
    if (question.size() + 3 > budget) {
        throw ContractError("question of " + std::to_string(question.size()) +
                            " tokens leaves no room for SEP, an answer and EOS in budget " + std::to_string(budget));
    }
    std::vector<int> context(question.begin(), question.end());
    context.push_back(Vocabulary::kSep);
    return continue_text(model, image_tokens, context, greedy_sampler(), 0);
}

std::vector<VqaItem> make_vqa_items(std::span<const Pair> corpus, std::span<const VqaExample> examples,
                                    const std::vector<VisualTokens>& image_tokens, const Vocabulary& vocab) {
    if (image_tokens.size() != corpus.size()) throw ContractError("one token sequence per corpus image expected");
    std::vector<VqaItem> out;
    for (const auto& ex : examples)
        out.push_back({image_tokens.at(ex.pair_index), vocab.encode(ex.question), vocab.encode(ex.answer)});
    return out;
}

Tensor vqa_loss(const Model& model, const VqaItem& item) {
    const auto text = vqa_layout(item.question, item.answer);
    const auto logits = model.forward({Direction::ImageToText, text, item.image_tokens}).logits;
    return loss_img2txt(logits, text, item.question.size() + 1);
}

VqaTrainer::VqaTrainer(Model& model, std::vector<VqaItem> items, VqaTrainerConfig config,
                       std::vector<TokenPair> captions)
    : model_(model),
      items_(std::move(items)),
      captions_(std::move(captions)),
      config_(config),
      optimizer_(model.parameters(), config.adam) {
    if (items_.empty()) throw ContractError("VQA trainer needs examples");
    if (config_.joint && captions_.empty()) throw ContractError("joint VQA training needs caption pairs");
}

double VqaTrainer::train_step() {
    std::vector<std::size_t> idx(items_.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(config_.seed, step_));
    if (config_.batch_size < idx.size()) {
        rng.shuffle(idx.begin(), idx.end());
        idx.resize(config_.batch_size);
    }
    Tensor total;
    for (std::size_t i : idx) {
        Tensor l = vqa_loss(model_, items_[i]);
        total = total.defined() ? add(total, l) : l;
    }
    if (config_.joint) {
        const auto& pair = captions_[rng.index(captions_.size())];
        const auto logits = model_.forward({Direction::TextToImage, pair.text, pair.image}).logits;
        total = add(total, loss_txt2img(logits, pair.image));
    }
    const double value = total.item();
    if (!std::isfinite(value)) throw TrainingError("non-finite VQA loss at step " + std::to_string(step_));
    total.backward();
    optimizer_.step();
    ++step_;
    return value;
}

VqaEval evaluate_vqa(const Model& model, std::span<const VqaItem> items, const Vocabulary& vocab, std::ostream* dump) {
    VqaEval eval;
    for (const auto& item : items) {
        auto predicted = vqa_answer(model, item.image_tokens, item.question);
        predicted.pop_back();
        const bool match = predicted == item.answer;
        eval.correct += match;
        ++eval.total;
        if (dump) {
            *dump << vocab.decode(item.question) << '\t' << vocab.decode(predicted) << '\t' << vocab.decode(item.answer)
                  << '\t' << (match ? 1 : 0) << '\n';
        }
    }
    return eval;
}

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

namespace {

using Gram = std::vector<std::string>;

std::map<Gram, std::size_t> ngram_counts(std::span<const std::string> words, std::size_t n) {
    std::map<Gram, std::size_t> out;
    for (std::size_t i = 0; i + n <= words.size(); ++i) ++out[Gram(words.begin() + i, words.begin() + i + n)];
    return out;
}

struct BleuStats {
    std::size_t matches[4] = {0, 0, 0, 0};
    std::size_t totals[4] = {0, 0, 0, 0};
    std::size_t candidate_length = 0;
    std::size_t reference_length = 0;
};

void accumulate(BleuStats& s, std::span<const std::string> candidate, const std::vector<std::vector<std::string>>& refs) {
    if (refs.empty()) throw ContractError("BLEU needs at least one reference");
    for (std::size_t n = 1; n <= 4; ++n) {
        std::map<Gram, std::size_t> max_ref;
        for (const auto& r : refs)
            for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
        for (const auto& [g, c] : ngram_counts(candidate, n)) {
            const auto it = max_ref.find(g);
            s.matches[n - 1] += std::min(c, it == max_ref.end() ? 0 : it->second);
            s.totals[n - 1] += c;
        }
    }
    std::size_t closest = refs[0].size();
    for (const auto& r : refs) {
        const auto d = [&](std::size_t len) { return len > candidate.size() ? len - candidate.size() : candidate.size() - len; };
        if (d(r.size()) < d(closest) || (d(r.size()) == d(closest) && r.size() < closest)) closest = r.size();
    }
    s.candidate_length += candidate.size();
    s.reference_length += closest;
}

double score(const BleuStats& s) {
    if (s.candidate_length == 0) return 0.0;
    double log_sum = 0.0;
    for (std::size_t n = 0; n < 4; ++n) {
        if (s.matches[n] == 0) return 0.0;
        log_sum += std::log(static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]));
    }
    const double c = static_cast<double>(s.candidate_length), r = static_cast<double>(s.reference_length);
    const double brevity = c > r ? 1.0 : std::exp(1.0 - r / c);
    return brevity * std::exp(log_sum / 4.0);
}

}  // namespace

double bleu4(std::span<const std::string> candidate, const std::vector<std::vector<std::string>>& references) {
    BleuStats s;
    accumulate(s, candidate, references);
    return score(s);
}

double corpus_bleu4(const std::vector<std::vector<std::string>>& candidates,
                    const std::vector<std::vector<std::vector<std::string>>>& references) {
    if (candidates.size() != references.size()) throw ContractError("one reference set per candidate expected");
    BleuStats s;
    for (std::size_t i = 0; i < candidates.size(); ++i) accumulate(s, candidates[i], references[i]);
    return score(s);
}

}  // namespace evlg
