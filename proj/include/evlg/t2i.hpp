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

enum class T2IMode { TwoStage, EndToEnd };

const char* mode_name(T2IMode mode);
T2IMode parse_mode(const std::string& name);  // ConfigError if unknown

// Linear(D, D) -> GELU -> Linear(D, d): last-layer hidden states to code space.
struct HiddenToCodeMap {
    Linear fc1, fc2;

    HiddenToCodeMap() = default;
    HiddenToCodeMap(std::size_t d_model, std::size_t code_dim, Rng& rng);
    // [n x D] -> [n x d]
    Tensor operator()(const Tensor& hidden) const;
    ParameterList parameters() const;
};

// The end-to-end reconstructor: hidden-to-code map followed by a decoder that
// starts as a copy of the pretrained quantizer decoder.
struct EndToEndReconstructor {
    HiddenToCodeMap map;
    Decoder decoder;

    EndToEndReconstructor() = default;
    EndToEndReconstructor(const Quantizer& quantizer, std::size_t d_model, std::uint64_t seed);
    ParameterList parameters() const;  // "map.*", "decoder.*"
};

// One caption with its image and the image's gold token sequence.
struct T2IExample {
    std::vector<int> text;
    std::vector<int> image_tokens;
    Tensor image;  // [1 x H x W x 3]
};

std::vector<T2IExample> make_t2i_examples(const std::vector<Pair>& pairs, const Quantizer& quantizer);

// Code-space tensor [1 x h x w x d] read from the image slots of a
// teacher-forced TextToImage pass over [text, z].
Tensor hidden_to_code(const Model& model, const HiddenToCodeMap& map, std::span<const int> text,
                      std::span<const int> z, std::size_t grid_side);

// Sample z, look it up in the codebook and decode: [1 x H x W x 3].
Tensor two_stage_generate(const Model& model, const Quantizer& quantizer, std::span<const int> text,
                          const SamplerConfig& sampler, std::uint64_t seed);

// Pixels from the end-to-end path for a given token sequence.
Tensor end_to_end_reconstruct(const Model& model, const EndToEndReconstructor& reconstructor,
                              const Quantizer& quantizer, std::span<const int> text, std::span<const int> z);

struct EndToEndLoss {
    Tensor combined;  // gen + rec_weight * rec
    Tensor gen_loss, rec_loss;
    double gen = 0.0;
    double rec = 0.0;
};

// Teacher-forced generation loss plus the pixel reconstruction loss of the
// end-to-end path. In TwoStage the reconstruction branch reads detached hidden
// states, so no reconstruction gradient reaches the transformer. With
// `normalize` both losses are means (per token, per pixel channel) instead of sums.
EndToEndLoss end_to_end_forward(const Model& model, const EndToEndReconstructor& reconstructor,
                                const Quantizer& quantizer, const T2IExample& example, T2IMode mode,
                                double rec_weight = 1.0, bool normalize = false);

// TwoStage: decode(lookup(z_gold)). EndToEnd: the end-to-end path over the
// gold sequence.
Tensor reconstruct_from_gold(T2IMode mode, std::span<const int> z_gold, const Quantizer& quantizer,
                             const Model* model = nullptr, const EndToEndReconstructor* reconstructor = nullptr,
                             std::span<const int> text = {});

struct T2ITrainerConfig {
    T2IMode mode = T2IMode::EndToEnd;
    double rec_weight = 1.0;
    AdamConfig adam;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    bool normalize = true;
};

struct T2IStepStats {
    std::uint64_t step = 0;
    double loss = 0.0;
    double gen = 0.0;
    double rec = 0.0;
};

// TwoStage optimizes the transformer on the generation loss alone; EndToEnd
// optimizes transformer and reconstructor on the combined loss.
class T2ITrainer {
   public:
    T2ITrainer(Model& model, EndToEndReconstructor& reconstructor, const Quantizer& quantizer,
               std::vector<T2IExample> examples, T2ITrainerConfig config);

    T2IStepStats train_step();  // TrainingError on a non-finite loss
    std::uint64_t step() const { return step_; }

   private:
    Model& model_;
    EndToEndReconstructor& reconstructor_;
    const Quantizer& quantizer_;
    std::vector<T2IExample> examples_;
    T2ITrainerConfig config_;
    Adam optimizer_;
    std::uint64_t step_ = 0;
};

struct CompareConfig {
    std::size_t train_pairs = 256;
    std::size_t eval_pairs = 16;
    std::uint64_t corpus_seed = 0;
    CorpusOptions corpus;
    QuantizerConfig quantizer;
    std::size_t vq_steps = 300;
    std::size_t vq_batch_size = 16;
    std::uint64_t vq_seed = 0;
    ModelConfig model;
    AdamConfig adam;
    std::size_t steps = 600;
    std::size_t batch_size = 8;
    double rec_weight = 1.0;
    bool normalize = true;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
};

struct CompareRow {
    std::string name;
    double mse = 0.0;  // per pixel, on held-out pairs
    double nll = 0.0;  // per image token, teacher-forced, on held-out pairs
};

struct SeedReport {
    std::uint64_t seed = 0;
    std::vector<CompareRow> rows;  // the five rows of compare_row_names()
};

struct CompareReport {
    std::vector<SeedReport> seeds;
    // Seeds where end-to-end G&R beats two-stage G&R, and where the end-to-end
    // reconstructor beats the two-stage one on gold sequences (ties count).
    std::size_t generation_wins() const;
    std::size_t gold_wins() const;
};

const std::vector<std::string>& compare_row_names();

// Trains a quantizer (unless one is given), then for every seed a two-stage
// and an end-to-end generator with equal step budgets, and evaluates the five
// generator/reconstructor combinations with greedy decoding.
CompareReport compare_modes(const CompareConfig& config, const Quantizer* pretrained = nullptr,
                            std::ostream* log = nullptr);

void write_compare_table(std::ostream& out, const CompareReport& report);
void write_compare_tsv(std::ostream& out, const CompareReport& report);

}  // namespace evlg
