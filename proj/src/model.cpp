#include "evlg/model.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "evlg/attention.hpp"
#include "evlg/errors.hpp"

namespace evlg {

namespace {

constexpr double kEmbedBound = 0.1;

Tensor concat_nonempty(std::vector<Tensor> parts) {
    std::erase_if(parts, [](const Tensor& t) { return !t.defined(); });
    return parts.size() == 1 ? parts[0] : concat(parts);
}

void check_ids(std::span<const int> ids, std::size_t vocab, const char* what) {
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= vocab)
            throw IndexError(std::string(what) + " id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
}

}  // namespace

void ModelConfig::validate() const {
    if (layers == 0) throw ConfigError("layers must be positive");
    if (heads == 0 || d_model % heads != 0) {
        throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by heads " + std::to_string(heads));
    }
    if (text_vocab < 5) throw ConfigError("text_vocab must hold the special tokens and at least one word");
    if (image_vocab == 0) throw ConfigError("image_vocab must be positive");
    if (max_text_length == 0) throw ConfigError("max_text_length must be positive");
    if (grid_side == 0) throw ConfigError("grid_side must be positive");
    if (kernel % 2 == 0) throw ConfigError("kernel must be odd, got " + std::to_string(kernel));
    if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
}

TransformerBlock::TransformerBlock(const ModelConfig& c, Rng& rng)
    : ln1(c.d_model),
      query(c.d_model, c.d_model, rng),
      key(c.d_model, c.d_model, rng),
      value(c.d_model, c.d_model, rng),
      output(c.d_model, c.d_model, rng),
      ln2(c.d_model),
      fc1(c.d_model, c.mlp_ratio * c.d_model, rng),
      fc2(c.mlp_ratio * c.d_model, c.d_model, rng) {}

ParameterList TransformerBlock::parameters() const {
    ParameterList out;
    append_prefixed(out, "ln1", ln1.parameters());
    append_prefixed(out, "attn.query", query.parameters());
    append_prefixed(out, "attn.key", key.parameters());
    append_prefixed(out, "attn.value", value.parameters());
    append_prefixed(out, "attn.output", output.parameters());
    append_prefixed(out, "ln2", ln2.parameters());
    append_prefixed(out, "mlp.fc1", fc1.parameters());
    append_prefixed(out, "mlp.fc2", fc2.parameters());
    return out;
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const std::size_t D = config_.d_model;
    text_embed_ = init_uniform({config_.text_vocab, D}, kEmbedBound, rng);
    image_embed_ = init_uniform({config_.image_vocab, D}, kEmbedBound, rng);
    text_position_ = init_uniform({config_.max_text_length, D}, kEmbedBound, rng);
    image_row_ = init_uniform({config_.grid_side, D}, kEmbedBound, rng);
    image_col_ = init_uniform({config_.grid_side, D}, kEmbedBound, rng);
    role_ = init_uniform({2, D}, kEmbedBound, rng);
    for (std::size_t i = 0; i < config_.layers; ++i) blocks_.emplace_back(config_, rng);
    final_norm_ = LayerNormParams(D);
    image_head_ = Linear(D, config_.image_vocab, rng);
    text_head_ = Linear(D, config_.text_vocab, rng);
}

MaskGeometry Model::layer_geometry(std::size_t layer, Direction direction, std::size_t text_length) const {
    const SparseKind kind = config_.sparse_enabled ? layer_kind(layer, config_.layers) : SparseKind::Dense;
    return MaskGeometry{direction, kind, text_length, config_.grid_side, config_.grid_side, config_.kernel};
}

Tensor Model::embed(const JointSequence& seq) const {
    const std::size_t m = seq.text.size(), k = seq.image.size(), g = config_.grid_side;
    std::vector<int> text_pos(m), rows(k), cols(k);
    std::iota(text_pos.begin(), text_pos.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
        rows[i] = static_cast<int>(i / g);
        cols[i] = static_cast<int>(i % g);
    }
    Tensor text = m ? add(embed_lookup(text_embed_, seq.text), embed_lookup(text_position_, text_pos)) : Tensor();
    Tensor image = k ? add(add(embed_lookup(image_embed_, seq.image), embed_lookup(image_row_, rows)),
                           embed_lookup(image_col_, cols))
                     : Tensor();
    const bool t2i = seq.direction == Direction::TextToImage;
    const std::size_t source = seq.source_length();
    std::vector<int> roles(seq.length());
    for (std::size_t i = 0; i < roles.size(); ++i) roles[i] = i < source ? 0 : 1;
    Tensor tokens = t2i ? concat_nonempty({text, image}) : concat_nonempty({image, text});
    return add(tokens, embed_lookup(role_, roles));
}

ForwardResult Model::forward(const JointSequence& seq) const {
    const std::size_t n = config_.image_length();
    const bool t2i = seq.direction == Direction::TextToImage;
    if (seq.text.size() > config_.max_text_length || seq.image.size() > n) {
        throw ContractError("sequence of " + std::to_string(seq.text.size()) + " text and " +
                            std::to_string(seq.image.size()) + " image tokens exceeds capacity " +
                            std::to_string(config_.max_text_length) + " + " + std::to_string(n));
    }
    if (t2i && seq.text.empty()) throw ContractError("text-to-image sequence needs at least one text token");
    if (!t2i && seq.image.size() != n) {
        throw ContractError("image-to-text sequence needs all " + std::to_string(n) + " image tokens, got " +
                            std::to_string(seq.image.size()));
    }
    check_ids(seq.text, config_.text_vocab, "text");
    check_ids(seq.image, config_.image_vocab, "image");

    const std::size_t L = seq.length();
    Tensor x = embed(seq);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const auto& b = blocks_[i];
        const MaskGeometry geo = layer_geometry(i + 1, seq.direction, seq.text.size());
        Tensor h = b.ln1(x);
        Tensor q = b.query(h), k = b.key(h), v = b.value(h);
        Tensor attn;
        if (config_.attention == AttentionImpl::Dense) {
            attn = dense_attention(q, k, v, config_.heads, leading_block(build_mask(geo), L));
        } else {
            attn = block_sparse_attention(q, k, v, config_.heads, block_schedule(geo));
        }
        x = add(x, b.output(attn));
        x = add(x, b.fc2(activate(b.fc1(b.ln2(x)), config_.activation)));
    }
    ForwardResult out;
    out.hidden = final_norm_(x);
    const std::size_t S = seq.source_length(), T = seq.target_length();
    if (T > 0) {
        const Linear& head = t2i ? image_head_ : text_head_;
        out.logits = head(slice_rows(out.hidden, S - 1, T));
    }
    return out;
}

std::vector<double> Model::next_logits(const JointSequence& seq) const {
    NoGradGuard no_grad;
    const bool t2i = seq.direction == Direction::TextToImage;
    if (t2i ? seq.image.size() >= config_.image_length() : seq.text.size() >= config_.max_text_length) {
        throw ContractError("target segment is already full");
    }
    ForwardResult f = forward(seq);
    const Linear& head = t2i ? image_head_ : text_head_;
    Tensor logits = head(slice_rows(f.hidden, seq.length() - 1, 1));
    return {logits.data().begin(), logits.data().end()};
}

ParameterList Model::trunk_parameters() const {
    ParameterList out = {{"text_embed", text_embed_},       {"image_embed", image_embed_}, {"text_position", text_position_},
                         {"image_row", image_row_},         {"image_col", image_col_},     {"role", role_}};
    for (std::size_t i = 0; i < blocks_.size(); ++i) append_prefixed(out, "block" + std::to_string(i), blocks_[i].parameters());
    append_prefixed(out, "final_norm", final_norm_.parameters());
    return out;
}

ParameterList Model::parameters() const {
    ParameterList out = trunk_parameters();
    append_prefixed(out, "image_head", image_head_.parameters());
    append_prefixed(out, "text_head", text_head_.parameters());
    return out;
}

namespace {

Tensor target_nll(const Tensor& logits, std::span<const int> targets, std::size_t first, bool normalize,
                  const char* what) {
    if (!logits.defined() || logits.rank() != 2 || logits.dim(0) != targets.size()) {
        throw ContractError(std::string(what) + ": " + std::to_string(targets.size()) + " targets for logits " +
                            (logits.defined() ? shape_to_string(logits.shape()) : std::string("[]")));
    }
    if (first >= targets.size()) throw ContractError(std::string(what) + ": nothing to score");
    const std::size_t count = targets.size() - first;
    Tensor rows = first == 0 ? logits : slice_rows(logits, first, count);
    Tensor nll = softmax_cross_entropy(rows, targets.subspan(first));
    return normalize ? scale(nll, 1.0 / static_cast<double>(count)) : nll;
}

}  // namespace

Tensor loss_txt2img(const Tensor& logits, std::span<const int> image_tokens, bool normalize) {
    return target_nll(logits, image_tokens, 0, normalize, "loss_txt2img");
}

Tensor loss_img2txt(const Tensor& logits, std::span<const int> text_tokens, std::size_t first, bool normalize) {
    return target_nll(logits, text_tokens, first, normalize, "loss_img2txt");
}

MultitaskLoss multitask_loss(const Model& model, std::span<const TokenPair> batch, bool normalize) {
    if (batch.empty()) throw ContractError("multitask_loss: empty batch");
    Tensor t2i_sum, i2t_sum;
    for (const auto& pair : batch) {
        JointSequence t2i{Direction::TextToImage, pair.text, pair.image};
        JointSequence i2t{Direction::ImageToText, pair.text, pair.image};
        Tensor a = loss_txt2img(model.forward(t2i).logits, pair.image, normalize);
        Tensor b = loss_img2txt(model.forward(i2t).logits, pair.text, 0, normalize);
        t2i_sum = t2i_sum.defined() ? add(t2i_sum, a) : a;
        i2t_sum = i2t_sum.defined() ? add(i2t_sum, b) : b;
    }
    MultitaskLoss out;
    out.total = add(t2i_sum, i2t_sum);
    out.t2i = t2i_sum.item();
    out.i2t = i2t_sum.item();
    return out;
}

std::string format_log_line(const StepStats& s) {
    std::ostringstream out;
    out << std::setprecision(10) << "step " << s.step << " loss " << s.loss << " l_t2i " << s.t2i << " l_i2t " << s.i2t;
    return out.str();
}

namespace {

ParameterList with_auxiliary(const Model& model, const AuxiliaryObjective& auxiliary) {
    ParameterList params = model.parameters();
    params.insert(params.end(), auxiliary.parameters.begin(), auxiliary.parameters.end());
    return params;
}

}  // namespace

Trainer::Trainer(Model& model, std::vector<TokenPair> corpus, TrainerConfig config, AuxiliaryObjective auxiliary)
    : model_(model),
      corpus_(std::move(corpus)),
      config_(config),
      auxiliary_(std::move(auxiliary)),
      optimizer_(with_auxiliary(model, auxiliary_), config.adam) {
    if (corpus_.empty()) throw ContractError("trainer needs a non-empty corpus");
    if (config_.batch_size == 0) throw ConfigError("batch_size must be positive");
}

std::vector<std::size_t> Trainer::batch_indices(std::uint64_t step) const {
    std::vector<std::size_t> idx(corpus_.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (config_.batch_size >= idx.size()) return idx;
    Rng rng(derive_seed(config_.seed, step));
    rng.shuffle(idx.begin(), idx.end());
    idx.resize(config_.batch_size);
    return idx;
}

StepStats Trainer::train_step() {
    const auto indices = batch_indices(step_);
    std::vector<TokenPair> batch;
    for (std::size_t i : indices) batch.push_back(corpus_[i]);
    MultitaskLoss loss = multitask_loss(model_, batch, config_.normalize_loss);
    if (auxiliary_.loss)
        for (std::size_t i : indices) loss.total = add(loss.total, auxiliary_.loss(i));
    StepStats stats{step_, loss.total.item(), loss.t2i, loss.i2t};
    if (!std::isfinite(stats.loss)) {
        throw TrainingError("non-finite loss at step " + std::to_string(step_) + " (l_t2i " + std::to_string(loss.t2i) +
                            ", l_i2t " + std::to_string(loss.i2t) + ", batch " + std::to_string(batch.size()) + ")");
    }
    loss.total.backward();
    optimizer_.step();
    ++step_;
    return stats;
}

}  // namespace evlg
