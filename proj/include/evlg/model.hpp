#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "evlg/masks.hpp"
#include "evlg/nn.hpp"
#include "evlg/optim.hpp"
#include "evlg/tensor.hpp"

namespace evlg {

enum class AttentionImpl { Dense, BlockSparse };

struct ModelConfig {
    std::size_t layers = 4;
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t text_vocab = 64;
    std::size_t image_vocab = 64;
    std::size_t max_text_length = 6;
    std::size_t grid_side = 4;
    std::size_t kernel = 3;
    bool sparse_enabled = true;
    AttentionImpl attention = AttentionImpl::BlockSparse;
    std::size_t mlp_ratio = 4;
    Activation activation = Activation::Gelu;

    // Throws ConfigError.
    void validate() const;
    std::size_t image_length() const { return grid_side * grid_side; }
    std::size_t capacity() const { return max_text_length + image_length(); }
};

// One sequence in the layout of its direction. In TextToImage the text is the
// source and `image` holds the target prefix (possibly shorter than the grid);
// in ImageToText the full image is the source and `text` is the target prefix.
struct JointSequence {
    Direction direction = Direction::TextToImage;
    std::vector<int> text;
    std::vector<int> image;

    std::size_t source_length() const { return direction == Direction::TextToImage ? text.size() : image.size(); }
    std::size_t target_length() const { return direction == Direction::TextToImage ? image.size() : text.size(); }
    std::size_t length() const { return text.size() + image.size(); }
};

struct ForwardResult {
    Tensor hidden;  // [L x D] after the final layer norm
    // Row j predicts target j, read from the position just before it. With a
    // full target of T tokens there are T rows; the last target position only
    // feeds later layers.
    Tensor logits;  // [T x V]
};

struct TransformerBlock {
    LayerNormParams ln1;
    Linear query, key, value, output;
    LayerNormParams ln2;
    Linear fc1, fc2;

    TransformerBlock() = default;
    TransformerBlock(const ModelConfig& config, Rng& rng);
    ParameterList parameters() const;
};

class Model {
   public:
    Model() = default;
    Model(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }

    // Masks of layer `layer` (1-based) for a sequence whose full-length
    // geometry is given by the direction, text length and grid.
    MaskGeometry layer_geometry(std::size_t layer, Direction direction, std::size_t text_length) const;

    // Throws ContractError when the sequence exceeds capacity; IndexError on
    // out-of-vocabulary ids.
    ForwardResult forward(const JointSequence& seq) const;

    // Logits of the next target token after the given prefix.
    std::vector<double> next_logits(const JointSequence& seq) const;

    ParameterList parameters() const;
    // Trunk only: embeddings, blocks and final norm (no output heads).
    ParameterList trunk_parameters() const;
    const Linear& image_head() const { return image_head_; }
    const Linear& text_head() const { return text_head_; }

   private:
    Tensor embed(const JointSequence& seq) const;

    ModelConfig config_;
    Tensor text_embed_, image_embed_;
    Tensor text_position_, image_row_, image_col_;
    Tensor role_;  // row 0 source, row 1 target
    std::vector<TransformerBlock> blocks_;
    LayerNormParams final_norm_;
    Linear image_head_, text_head_;
};

// Sum over target positions of the token negative log-likelihood. Targets are
// scored from `first` on (earlier rows are context only). When `normalize` is
// set the sum is divided by the number of scored tokens.
Tensor loss_txt2img(const Tensor& logits, std::span<const int> image_tokens, bool normalize = false);
Tensor loss_img2txt(const Tensor& logits, std::span<const int> text_tokens, std::size_t first = 0,
                    bool normalize = false);

// An image-text training pair, both sides as token ids.
struct TokenPair {
    std::vector<int> text;   // ends in EOS
    std::vector<int> image;  // full grid
};

struct MultitaskLoss {
    Tensor total;
    double t2i = 0.0;
    double i2t = 0.0;
};

// Sum over the batch of loss_txt2img + loss_img2txt, each pair seen in both
// directions.
MultitaskLoss multitask_loss(const Model& model, std::span<const TokenPair> batch, bool normalize = false);

struct TrainerConfig {
    AdamConfig adam;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    bool normalize_loss = false;
};

struct StepStats {
    std::uint64_t step = 0;
    double loss = 0.0;
    double t2i = 0.0;
    double i2t = 0.0;
};

// "step <int> loss <float> l_t2i <float> l_i2t <float>"
std::string format_log_line(const StepStats& stats);

// Extra per-pair loss added to every batch, with the parameters it trains.
struct AuxiliaryObjective {
    ParameterList parameters;
    std::function<Tensor(std::size_t pair_index)> loss;
};

// Joint training over a fixed corpus. The minibatch of step s depends only on
// (seed, s), so a run resumed from a checkpoint replays the same batches.
class Trainer {
   public:
    Trainer(Model& model, std::vector<TokenPair> corpus, TrainerConfig config, AuxiliaryObjective auxiliary = {});

    // Throws TrainingError when the loss is not finite.
    StepStats train_step();
    std::vector<std::size_t> batch_indices(std::uint64_t step) const;

    std::uint64_t step() const { return step_; }
    void set_step(std::uint64_t step) { step_ = step; }
    Adam& optimizer() { return optimizer_; }
    const Adam& optimizer() const { return optimizer_; }

   private:
    Model& model_;
    std::vector<TokenPair> corpus_;
    TrainerConfig config_;
    AuxiliaryObjective auxiliary_;
    Adam optimizer_;
    std::uint64_t step_ = 0;
};

}  // namespace evlg
